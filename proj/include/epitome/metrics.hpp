#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace epitome::metrics {

struct EvalCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  EvalCounts& operator+=(const EvalCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const EvalCounts&) const = default;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Both lists deduplicated before counting. With `literal`, duplicates each
/// count once per occurrence.
EvalCounts word_level_counts(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
                             bool literal = false);

/// Zero denominators give zero.
Prf prf(const EvalCounts& counts);

struct WeightedPrf {
  double weight = 0.0;
  Prf metrics;
};

Prf weighted_macro(const std::vector<WeightedPrf>& groups);

/// Fraction of test label occurrences absent from the training vocabulary.
double oov_ratio(const std::vector<std::string>& test_labels, const std::vector<std::string>& train_vocab);

/// KL(p || q) over the union support after adding epsilon to every entry and
/// renormalizing. Inputs are non-negative weights, not necessarily normalized.
double kl_divergence(const std::map<std::string, double>& p, const std::map<std::string, double>& q,
                     double epsilon = 1e-9);
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q, double epsilon = 1e-9);

/// Relative label frequencies.
std::map<std::string, double> label_distribution(const std::vector<std::vector<std::string>>& sequences);

}  // namespace epitome::metrics
