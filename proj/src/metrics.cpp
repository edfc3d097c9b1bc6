#include "epitome/metrics.hpp"

#include <cmath>
#include <set>

#include "epitome/error.hpp"

namespace epitome::metrics {

EvalCounts word_level_counts(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
                             bool literal) {
  const std::set<std::string> pred_set(pred.begin(), pred.end());
  const std::set<std::string> truth_set(truth.begin(), truth.end());
  EvalCounts c;
  if (literal) {
    for (const auto& y : pred) (truth_set.count(y) != 0u ? c.tp : c.fp) += 1;
    for (const auto& y : truth) c.fn += pred_set.count(y) == 0u ? 1 : 0;
    return c;
  }
  for (const auto& y : pred_set) (truth_set.count(y) != 0u ? c.tp : c.fp) += 1;
  for (const auto& y : truth_set) c.fn += pred_set.count(y) == 0u ? 1 : 0;
  return c;
}

Prf prf(const EvalCounts& counts) {
  Prf out;
  const auto tp = static_cast<double>(counts.tp);
  if (counts.tp + counts.fp > 0) out.precision = tp / static_cast<double>(counts.tp + counts.fp);
  if (counts.tp + counts.fn > 0) out.recall = tp / static_cast<double>(counts.tp + counts.fn);
  if (out.precision + out.recall > 0.0) out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

Prf weighted_macro(const std::vector<WeightedPrf>& groups) {
  double total = 0.0;
  Prf out;
  for (const auto& g : groups) {
    if (g.weight < 0.0) throw Error("group weights must be non-negative");
    total += g.weight;
    out.precision += g.weight * g.metrics.precision;
    out.recall += g.weight * g.metrics.recall;
    out.f1 += g.weight * g.metrics.f1;
  }
  if (total <= 0.0) throw Error("weighted_macro needs a positive total weight");
  out.precision /= total;
  out.recall /= total;
  out.f1 /= total;
  return out;
}

double oov_ratio(const std::vector<std::string>& test_labels, const std::vector<std::string>& train_vocab) {
  if (test_labels.empty()) throw Error("oov_ratio of an empty test set");
  const std::set<std::string> vocab(train_vocab.begin(), train_vocab.end());
  std::size_t missing = 0;
  for (const auto& l : test_labels) missing += vocab.count(l) == 0u ? 1 : 0;
  return static_cast<double>(missing) / static_cast<double>(test_labels.size());
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q, double epsilon) {
  if (!(epsilon > 0.0)) throw Error("KL smoothing epsilon must be positive");
  if (p.size() != q.size() || p.empty()) throw Error("KL inputs must share a non-empty support");
  double sp = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw Error("KL inputs must be non-negative");
    sp += p[i] + epsilon;
    sq += q[i] + epsilon;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = (p[i] + epsilon) / sp;
    const double qi = (q[i] + epsilon) / sq;
    kl += pi * std::log(pi / qi);
  }
  return std::max(kl, 0.0);
}

double kl_divergence(const std::map<std::string, double>& p, const std::map<std::string, double>& q, double epsilon) {
  std::set<std::string> support;
  for (const auto& [k, _] : p) support.insert(k);
  for (const auto& [k, _] : q) support.insert(k);
  std::vector<double> pv;
  std::vector<double> qv;
  for (const auto& k : support) {
    auto a = p.find(k);
    auto b = q.find(k);
    pv.push_back(a == p.end() ? 0.0 : a->second);
    qv.push_back(b == q.end() ? 0.0 : b->second);
  }
  return kl_divergence(pv, qv, epsilon);
}

std::map<std::string, double> label_distribution(const std::vector<std::vector<std::string>>& sequences) {
  std::map<std::string, double> out;
  double total = 0.0;
  for (const auto& seq : sequences) {
    for (const auto& l : seq) {
      out[l] += 1.0;
      total += 1.0;
    }
  }
  for (auto& [_, v] : out) v /= total;
  return out;
}

}  // namespace epitome::metrics
