#include "metaxl/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "metaxl/errors.hpp"

namespace metaxl {

std::string_view to_string(RepLevel level) { return level == RepLevel::token ? "token" : "sequence"; }

RepLevel parse_rep_level(std::string_view text) {
  if (text == "token") return RepLevel::token;
  if (text == "sequence") return RepLevel::sequence;
  throw ContractError("unknown representation level '" + std::string(text) + "'");
}

RepresentationSet make_representation_set(std::vector<std::vector<double>> vectors,
                                          std::string language, RepLevel level) {
  RepresentationSet set;
  set.language = std::move(language);
  set.level = level;
  for (auto& v : vectors) {
    if (!set.vectors.empty() && v.size() != set.vectors.front().size()) {
      throw ContractError("representation set '" + set.language + "': vectors of dimension " +
                          std::to_string(set.vectors.front().size()) + " and " +
                          std::to_string(v.size()));
    }
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
      ++set.dropped_zero;
      continue;
    }
    set.vectors.push_back(std::move(v));
  }
  if (set.vectors.empty()) {
    throw ContractError("representation set '" + set.language + "' has no nonzero vectors");
  }
  return set;
}

double cosine_distance(std::span<const double> s, std::span<const double> t) {
  if (s.size() != t.size()) {
    throw ContractError("cosine_distance: dimensions " + std::to_string(s.size()) + " and " +
                        std::to_string(t.size()));
  }
  double dot = 0.0, ss = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    dot += s[i] * t[i];
    ss += s[i] * s[i];
    tt += t[i] * t[i];
  }
  if (ss == 0.0 || tt == 0.0) throw ContractError("cosine_distance: zero vector");
  const double cos = dot / (std::sqrt(ss) * std::sqrt(tt));
  return std::clamp(1.0 - cos, 0.0, 2.0);
}

namespace {

void check_pair(const RepresentationSet& s, const RepresentationSet& t) {
  if (s.vectors.empty() || t.vectors.empty()) throw ContractError("hausdorff: empty set");
  if (s.dim() != t.dim()) {
    throw ContractError("hausdorff: dimension mismatch (" + std::to_string(s.dim()) + " vs " +
                        std::to_string(t.dim()) + ")");
  }
}

// d(s_i, t_j) for all pairs, row-major over s.
std::vector<double> distance_matrix(const RepresentationSet& s, const RepresentationSet& t) {
  std::vector<double> d(s.vectors.size() * t.vectors.size());
  for (std::size_t i = 0; i < s.vectors.size(); ++i) {
    for (std::size_t j = 0; j < t.vectors.size(); ++j) {
      d[i * t.vectors.size() + j] = cosine_distance(s.vectors[i], t.vectors[j]);
    }
  }
  return d;
}

struct Directed {
  double max_min_st = 0.0, max_min_ts = 0.0;
  double mean_min_st = 0.0, mean_min_ts = 0.0;
};

Directed directed(const RepresentationSet& s, const RepresentationSet& t) {
  check_pair(s, t);
  const std::size_t m = s.vectors.size(), n = t.vectors.size();
  const std::vector<double> d = distance_matrix(s, t);
  std::vector<double> row_min(m, std::numeric_limits<double>::infinity());
  std::vector<double> col_min(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      row_min[i] = std::min(row_min[i], d[i * n + j]);
      col_min[j] = std::min(col_min[j], d[i * n + j]);
    }
  }
  Directed r;
  for (double v : row_min) {
    r.max_min_st = std::max(r.max_min_st, v);
    r.mean_min_st += v;
  }
  for (double v : col_min) {
    r.max_min_ts = std::max(r.max_min_ts, v);
    r.mean_min_ts += v;
  }
  r.mean_min_st /= static_cast<double>(m);
  r.mean_min_ts /= static_cast<double>(n);
  return r;
}

}  // namespace

double hausdorff(const RepresentationSet& s, const RepresentationSet& t) {
  const Directed r = directed(s, t);
  return std::max(r.max_min_st, r.max_min_ts);
}

double hausdorff_modified(const RepresentationSet& s, const RepresentationSet& t) {
  const Directed r = directed(s, t);
  return 0.5 * (r.mean_min_st + r.mean_min_ts);
}

Pca2Result pca2(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 3) throw ContractError("pca2: need at least 3 vectors");
  const std::size_t n = vectors.size(), d = vectors.front().size();
  if (d < 2) throw ContractError("pca2: vectors must have at least 2 dimensions");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    if (vectors[i].size() != d) throw ContractError("pca2: ragged input");
    for (std::size_t k = 0; k < d; ++k) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = vectors[i][k];
    }
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("pca2: eigendecomposition failed");

  Pca2Result r;
  r.total_variance = cov.trace();
  const Eigen::Index last = static_cast<Eigen::Index>(d) - 1;
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(last - c);
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      if (std::abs(v(k)) > 1e-12) {
        if (v(k) < 0) v = -v;
        break;
      }
    }
    const double lambda = std::max(eig.eigenvalues()(last - c), 0.0);
    r.explained[static_cast<std::size_t>(c)] =
        r.total_variance > 0.0 ? std::clamp(lambda / r.total_variance, 0.0, 1.0) : 0.0;
    r.components[static_cast<std::size_t>(c)].assign(v.data(), v.data() + v.size());
  }
  Eigen::MatrixXd basis(static_cast<Eigen::Index>(d), 2);
  for (int c = 0; c < 2; ++c) {
    for (std::size_t k = 0; k < d; ++k) {
      basis(static_cast<Eigen::Index>(k), c) = r.components[static_cast<std::size_t>(c)][k];
    }
  }
  const Eigen::MatrixXd proj = x * basis;
  r.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.points[i] = {proj(static_cast<Eigen::Index>(i), 0), proj(static_cast<Eigen::Index>(i), 1)};
  }
  return r;
}

double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw ContractError("pearson: need two sequences of equal length >= 2");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw ContractError("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace metaxl
