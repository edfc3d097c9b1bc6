#include "epitome/pretrain_data.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>

#include <json.hpp>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::pretrain {

InfillingSample apply_spans(const std::vector<std::string>& tokens, const std::vector<Span>& spans) {
  InfillingSample out;
  std::size_t cursor = 0;
  std::size_t slot = 0;
  for (const auto& [start, len] : spans) {
    if (start < cursor || start > tokens.size() || start + len > tokens.size())
      throw Error("infilling spans must be sorted, in range and non-overlapping");
    out.noised.insert(out.noised.end(), tokens.begin() + static_cast<std::ptrdiff_t>(cursor),
                      tokens.begin() + static_cast<std::ptrdiff_t>(start));
    out.noised.emplace_back(kMaskToken);
    out.targets.push_back({slot++, std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                                                            tokens.begin() + static_cast<std::ptrdiff_t>(start + len))});
    cursor = start + len;
  }
  out.noised.insert(out.noised.end(), tokens.begin() + static_cast<std::ptrdiff_t>(cursor), tokens.end());
  return out;
}

std::vector<std::string> reconstruct(const InfillingSample& sample) {
  std::vector<std::string> out;
  std::size_t slot = 0;
  for (const auto& tok : sample.noised) {
    if (tok != kMaskToken) {
      out.push_back(tok);
      continue;
    }
    if (slot >= sample.targets.size()) throw Error("more [MASK] sentinels than targets");
    const auto& span = sample.targets[slot++].span;
    out.insert(out.end(), span.begin(), span.end());
  }
  if (slot != sample.targets.size()) throw Error("fewer [MASK] sentinels than targets");
  return out;
}

InfillingSample text_infilling(const std::vector<std::string>& tokens, double mask_ratio, std::uint64_t rng_seed) {
  if (tokens.size() < 2) throw Error("text infilling needs at least two tokens");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw Error("mask_ratio must lie in [0, 1)");
  const std::size_t n = tokens.size();
  const auto budget = static_cast<std::size_t>(std::lround(mask_ratio * static_cast<double>(n)));
  if (budget == 0) return apply_spans(tokens, {});

  std::mt19937_64 rng(rng_seed);
  std::poisson_distribution<int> span_len(kSpanPoissonMean);
  std::vector<Span> spans;
  std::size_t masked = 0;
  // A candidate span [s, s+len) must keep one untouched token between itself
  // and every existing span so that sentinels stay distinguishable.
  auto clear = [&](std::size_t s, std::size_t len) {
    return std::all_of(spans.begin(), spans.end(),
                       [&](const Span& o) { return s + len < o.first || o.first + o.second < s; });
  };
  for (std::size_t attempt = 0; attempt < 4 * n && masked < budget; ++attempt) {
    const auto len = std::min<std::size_t>(static_cast<std::size_t>(span_len(rng)), budget - masked);
    std::vector<std::size_t> starts;
    for (std::size_t s = 0; s + len <= n; ++s) {
      if (clear(s, len)) starts.push_back(s);
    }
    if (starts.empty()) continue;
    const auto s = starts[std::uniform_int_distribution<std::size_t>(0, starts.size() - 1)(rng)];
    spans.emplace_back(s, len);
    std::sort(spans.begin(), spans.end());
    masked += len;
  }
  return apply_spans(tokens, spans);
}

bool cdi_window_predicate(const ingest::FunctionRecord& rec, std::size_t i, std::size_t j, std::size_t w) {
  if (i >= rec.instructions.size() || j >= rec.instructions.size()) return false;
  if (rec.instructions[i].block_id != rec.instructions[j].block_id) return false;
  const std::size_t dist = i > j ? i - j : j - i;
  return dist >= 1 && dist <= w;
}

namespace {

InstructionPairSample make_pair_sample(const ingest::FunctionRecord& rec, std::size_t i, std::size_t j,
                                       PairLabel label, PairTask task) {
  InstructionPairSample s;
  s.tokens_a = rec.instructions[i].tokens();
  s.tokens_b = rec.instructions[j].tokens();
  s.label = label;
  s.task = task;
  s.index_a = i;
  s.index_b = j;
  return s;
}

// Samples up to `want` ordered pairs i<j rejected by `is_positive`, without replacement.
std::vector<std::pair<std::size_t, std::size_t>> sample_negatives(
    std::size_t n, std::size_t want, std::mt19937_64& rng,
    const std::function<bool(std::size_t, std::size_t)>& is_positive) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (want == 0 || n < 2) return out;
  const std::size_t total = n * (n - 1) / 2;
  if (total <= 20000) {
    std::vector<std::pair<std::size_t, std::size_t>> pool;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!is_positive(i, j)) pool.emplace_back(i, j);
      }
    }
    const std::size_t take = std::min(want, pool.size());
    for (std::size_t k = 0; k < take; ++k) {
      const auto pick = std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng);
      std::swap(pool[k], pool[pick]);
      out.push_back(pool[k]);
    }
    return out;
  }
  std::set<std::pair<std::size_t, std::size_t>> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t attempt = 0; attempt < 50 * want && out.size() < want; ++attempt) {
    auto a = pick(rng);
    auto b = pick(rng);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (is_positive(a, b) || !chosen.emplace(a, b).second) continue;
    out.emplace_back(a, b);
  }
  return out;
}

}  // namespace

std::vector<InstructionPairSample> cdi_pairs(const ingest::FunctionRecord& rec, std::size_t w,
                                             std::size_t negatives_per_positive, std::uint64_t rng_seed) {
  if (w < 1) throw Error("CDI window must be >= 1");
  std::vector<InstructionPairSample> out;
  const std::size_t n = rec.instructions.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n && j <= i + w; ++j) {
      if (cdi_window_predicate(rec, i, j, w)) out.push_back(make_pair_sample(rec, i, j, PairLabel::positive, PairTask::cdi));
    }
  }
  std::mt19937_64 rng(rng_seed);
  const auto negatives = sample_negatives(n, out.size() * negatives_per_positive, rng,
                                          [&](std::size_t i, std::size_t j) { return cdi_window_predicate(rec, i, j, w); });
  for (const auto& [i, j] : negatives) out.push_back(make_pair_sample(rec, i, j, PairLabel::negative, PairTask::cdi));
  return out;
}

std::vector<InstructionPairSample> dui_pairs(const ingest::FunctionRecord& rec,
                                             std::size_t negatives_per_positive, std::uint64_t rng_seed) {
  const auto defuse = ingest::compute_defuse_pairs(rec);
  std::vector<InstructionPairSample> out;
  if (defuse.empty()) return out;
  const std::set<ingest::DefUsePair> positives(defuse.begin(), defuse.end());
  for (const auto& [d, u] : defuse) out.push_back(make_pair_sample(rec, d, u, PairLabel::positive, PairTask::dui));
  std::mt19937_64 rng(rng_seed);
  const auto negatives = sample_negatives(rec.instructions.size(), out.size() * negatives_per_positive, rng,
                                          [&](std::size_t i, std::size_t j) { return positives.count({i, j}) != 0u; });
  for (const auto& [i, j] : negatives) out.push_back(make_pair_sample(rec, i, j, PairLabel::negative, PairTask::dui));
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& function_id) {
  return seed ^ util::fnv1a(function_id);
}

std::string to_json_line(const InfillingSample& s, const std::string& function_id) {
  nlohmann::json obj;
  obj["function_id"] = function_id;
  obj["task"] = "infill";
  obj["noised"] = s.noised;
  nlohmann::json targets = nlohmann::json::array();
  for (const auto& t : s.targets) targets.push_back({{"slot", t.mask_slot}, {"span", t.span}});
  obj["targets"] = std::move(targets);
  return obj.dump();
}

std::string to_json_line(const InstructionPairSample& s, const std::string& function_id) {
  nlohmann::json obj;
  obj["function_id"] = function_id;
  obj["task"] = s.task == PairTask::cdi ? "cdi" : "dui";
  obj["a"] = s.tokens_a;
  obj["b"] = s.tokens_b;
  obj["index_a"] = s.index_a;
  obj["index_b"] = s.index_b;
  obj["label"] = s.label == PairLabel::positive ? 1 : 0;
  return obj.dump();
}

}  // namespace epitome::pretrain
