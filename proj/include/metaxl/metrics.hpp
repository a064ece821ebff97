#pragma once

// Span-level F1 for BIO tag sequences and class F1 for classification.

#include <string>
#include <vector>

namespace metaxl {

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// [start, end] inclusive, over word positions.
struct Span {
  std::string type;
  std::size_t start = 0;
  std::size_t end = 0;

  auto operator<=>(const Span&) const = default;
};

// B-X opens a span; I-X continues a span of type X and otherwise opens one
// (conlleval convention); O and anything else close it.
std::vector<Span> extract_spans(const std::vector<std::string>& tags);

// Micro-averaged over every sentence. Precision is 0 without predicted
// spans and recall 0 without gold spans; F1 is 0 when P + R = 0.
Prf span_f1(const std::vector<std::vector<std::string>>& gold,
            const std::vector<std::vector<std::string>>& predicted);
Prf span_f1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted);

// F1 of class 1.
double binary_f1(const std::vector<int>& gold, const std::vector<int>& predicted);
// Unweighted mean of per-class F1 over classes [0, n_classes).
double macro_f1(const std::vector<int>& gold, const std::vector<int>& predicted,
                std::size_t n_classes);

}  // namespace metaxl
