#pragma once

// Representation-gap analysis: cosine Hausdorff distance between two sets of
// vectors, a two-component PCA, and Pearson correlation.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metaxl {

enum class RepLevel { sequence, token };

std::string_view to_string(RepLevel level);
RepLevel parse_rep_level(std::string_view text);

struct RepresentationSet {
  std::vector<std::vector<double>> vectors;
  std::string language;
  RepLevel level = RepLevel::sequence;
  std::size_t dropped_zero = 0;

  std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

// Drops all-zero vectors (cosine is undefined for them) and counts them.
// Throws ContractError on ragged input or when nothing is left.
RepresentationSet make_representation_set(std::vector<std::vector<double>> vectors,
                                          std::string language, RepLevel level);

// 1 - cos(s, t), in [0, 2].
double cosine_distance(std::span<const double> s, std::span<const double> t);

// max( max_s min_t d(s,t), max_t min_s d(s,t) ).
double hausdorff(const RepresentationSet& s, const RepresentationSet& t);
// Mean of the two directed mean-min distances.
double hausdorff_modified(const RepresentationSet& s, const RepresentationSet& t);

struct Pca2Result {
  std::vector<std::array<double, 2>> points;
  std::array<double, 2> explained{};  // fractions of total variance
  std::array<std::vector<double>, 2> components;
  double total_variance = 0.0;
};

// Mean-centred projection onto the two leading covariance eigenvectors.
// Each component's first coordinate with |x| > 1e-12 is made positive.
Pca2Result pca2(const std::vector<std::vector<double>>& vectors);

// Sample Pearson correlation.
double pearson(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace metaxl
