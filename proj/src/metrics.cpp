#include "metaxl/metrics.hpp"

#include <algorithm>
#include <string>

#include "metaxl/errors.hpp"

namespace metaxl {

namespace {

double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::string span_type(const std::string& tag) { return tag.size() > 2 ? tag.substr(2) : ""; }

}  // namespace

std::vector<Span> extract_spans(const std::vector<std::string>& tags) {
  std::vector<Span> spans;
  bool open = false;
  Span cur;
  auto close = [&](std::size_t last) {
    if (!open) return;
    cur.end = last;
    spans.push_back(cur);
    open = false;
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& tag = tags[i];
    const bool begin = tag.rfind("B-", 0) == 0;
    const bool inside = tag.rfind("I-", 0) == 0;
    if (inside && open && cur.type == span_type(tag)) continue;
    if (i > 0) close(i - 1);
    if (begin || inside) {
      cur = Span{span_type(tag), i, i};
      open = true;
    }
  }
  if (!tags.empty()) close(tags.size() - 1);
  return spans;
}

Prf span_f1(const std::vector<std::vector<std::string>>& gold,
            const std::vector<std::vector<std::string>>& predicted) {
  if (gold.size() != predicted.size()) {
    throw ContractError("span_f1: " + std::to_string(gold.size()) + " gold sentences vs " +
                        std::to_string(predicted.size()) + " predicted");
  }
  std::size_t n_gold = 0, n_pred = 0, n_hit = 0;
  for (std::size_t s = 0; s < gold.size(); ++s) {
    if (gold[s].size() != predicted[s].size()) {
      throw ContractError("span_f1: sentence " + std::to_string(s) + " has " +
                          std::to_string(gold[s].size()) + " gold tags but " +
                          std::to_string(predicted[s].size()) + " predicted");
    }
    auto g = extract_spans(gold[s]);
    auto p = extract_spans(predicted[s]);
    std::sort(g.begin(), g.end());
    std::sort(p.begin(), p.end());
    std::vector<Span> common;
    std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(common));
    n_gold += g.size();
    n_pred += p.size();
    n_hit += common.size();
  }
  Prf r;
  r.precision = n_pred ? static_cast<double>(n_hit) / static_cast<double>(n_pred) : 0.0;
  r.recall = n_gold ? static_cast<double>(n_hit) / static_cast<double>(n_gold) : 0.0;
  r.f1 = f1_of(r.precision, r.recall);
  return r;
}

Prf span_f1(const std::vector<std::string>& gold, const std::vector<std::string>& predicted) {
  return span_f1(std::vector<std::vector<std::string>>{gold},
                 std::vector<std::vector<std::string>>{predicted});
}

namespace {

double class_f1(const std::vector<int>& gold, const std::vector<int>& predicted, int cls) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == cls, p = predicted[i] == cls;
    tp += g && p;
    fp += !g && p;
    fn += g && !p;
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return f1_of(precision, recall);
}

void check_lengths(const std::vector<int>& gold, const std::vector<int>& predicted) {
  if (gold.size() != predicted.size()) {
    throw ContractError("f1: " + std::to_string(gold.size()) + " gold labels vs " +
                        std::to_string(predicted.size()) + " predicted");
  }
}

}  // namespace

double binary_f1(const std::vector<int>& gold, const std::vector<int>& predicted) {
  check_lengths(gold, predicted);
  return class_f1(gold, predicted, 1);
}

double macro_f1(const std::vector<int>& gold, const std::vector<int>& predicted,
                std::size_t n_classes) {
  check_lengths(gold, predicted);
  if (n_classes == 0) throw ContractError("macro_f1: no classes");
  double total = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) total += class_f1(gold, predicted, static_cast<int>(c));
  return total / static_cast<double>(n_classes);
}

}  // namespace metaxl
