#pragma once

// Brute-force references for the metrics and analysis code. Each one is
// written from the definition and shares nothing with the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace metaxl::testing {

using SpanSet = std::set<std::tuple<std::string, std::size_t, std::size_t>>;

// Tests every (type, start, end) against the span definition.
inline SpanSet oracle_spans(const std::vector<std::string>& tags,
                            const std::vector<std::string>& types = {"PER", "LOC"}) {
  SpanSet out;
  auto is = [&](std::size_t i, const std::string& prefix, const std::string& type) {
    return i < tags.size() && tags[i] == prefix + type;
  };
  for (const std::string& type : types) {
    for (std::size_t a = 0; a < tags.size(); ++a) {
      const bool continues = a > 0 && (is(a - 1, "B-", type) || is(a - 1, "I-", type));
      const bool starts = is(a, "B-", type) || (is(a, "I-", type) && !continues);
      if (!starts) continue;
      for (std::size_t b = a; b < tags.size(); ++b) {
        bool inner = true;
        for (std::size_t k = a + 1; k <= b; ++k) inner = inner && is(k, "I-", type);
        if (inner && !is(b + 1, "I-", type)) out.emplace(type, a, b);
      }
    }
  }
  return out;
}

struct OraclePrf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline OraclePrf oracle_span_f1(const SpanSet& gold, const SpanSet& pred) {
  std::size_t hit = 0;
  for (const auto& s : pred) hit += gold.count(s);
  OraclePrf r;
  r.precision = pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
  r.recall = gold.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(gold.size());
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

inline double oracle_cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, aa = 0, bb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return std::clamp(1.0 - dot / (std::sqrt(aa) * std::sqrt(bb)), 0.0, 2.0);
}

inline double oracle_hausdorff(const std::vector<std::vector<double>>& s,
                               const std::vector<std::vector<double>>& t) {
  auto directed = [](const auto& x, const auto& y) {
    double worst = 0;
    for (const auto& a : x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : y) best = std::min(best, oracle_cosine_distance(a, b));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(s, t), directed(t, s));
}

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; eigenvectors
// are the columns of `vectors`.
inline void jacobi_eigen(std::vector<std::vector<double>> a, std::vector<double>& values,
                         std::vector<std::vector<double>>& vectors) {
  const std::size_t n = a.size();
  vectors.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) vectors[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vectors[k][p], vkq = vectors[k][q];
          vectors[k][p] = c * vkp - s * vkq;
          vectors[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i][i];
}

// Two leading principal directions of x from the Jacobi oracle.
struct OraclePca {
  std::vector<double> mean;
  std::vector<double> values;                // descending
  std::vector<std::vector<double>> vectors;  // vectors[c] is component c
  double trace = 0.0;
};

inline OraclePca oracle_pca(const std::vector<std::vector<double>>& x) {
  const std::size_t n = x.size(), d = x.front().size();
  OraclePca out;
  out.mean.assign(d, 0.0);
  for (const auto& row : x) {
    for (std::size_t k = 0; k < d; ++k) out.mean[k] += row[k] / static_cast<double>(n);
  }
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (const auto& row : x) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        cov[i][j] += (row[i] - out.mean[i]) * (row[j] - out.mean[j]) / static_cast<double>(n - 1);
      }
    }
  }
  std::vector<double> values;
  std::vector<std::vector<double>> vecs;
  jacobi_eigen(cov, values, vecs);
  std::vector<std::size_t> order(d);
  for (std::size_t i = 0; i < d; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] > values[b]; });
  for (double v : values) out.trace += v;
  for (std::size_t c = 0; c < d; ++c) {
    out.values.push_back(values[order[c]]);
    std::vector<double> col(d);
    for (std::size_t k = 0; k < d; ++k) col[k] = vecs[k][order[c]];
    out.vectors.push_back(std::move(col));
  }
  return out;
}

}  // namespace metaxl::testing
