#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "epitome/ingest.hpp"

namespace epitome::pretrain {

inline constexpr const char* kMaskToken = "[MASK]";

enum class PairTask { cdi, dui };
enum class PairLabel { negative = 0, positive = 1 };

struct InstructionPairSample {
  std::vector<std::string> tokens_a;
  std::vector<std::string> tokens_b;
  PairLabel label = PairLabel::negative;
  PairTask task = PairTask::cdi;
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  bool operator==(const InstructionPairSample&) const = default;
};

struct InfillTarget {
  std::size_t mask_slot = 0;  // ordinal among the [MASK] sentinels
  std::vector<std::string> span;
  bool operator==(const InfillTarget&) const = default;
};

struct InfillingSample {
  std::vector<std::string> noised;
  std::vector<InfillTarget> targets;
  bool operator==(const InfillingSample&) const = default;
};

/// (start, length) over the original token list. Zero-length spans insert a
/// [MASK] before `start`.
using Span = std::pair<std::size_t, std::size_t>;

inline constexpr double kDefaultMaskRatio = 0.15;
inline constexpr double kSpanPoissonMean = 3.0;
inline constexpr std::size_t kDefaultCdiWindow = 2;

/// Replaces each span with one [MASK]. Spans must be sorted and non-overlapping.
InfillingSample apply_spans(const std::vector<std::string>& tokens, const std::vector<Span>& spans);
/// Inverse of apply_spans.
std::vector<std::string> reconstruct(const InfillingSample& sample);

InfillingSample text_infilling(const std::vector<std::string>& tokens, double mask_ratio,
                               std::uint64_t rng_seed);

bool cdi_window_predicate(const ingest::FunctionRecord& rec, std::size_t i, std::size_t j, std::size_t w);

std::vector<InstructionPairSample> cdi_pairs(const ingest::FunctionRecord& rec, std::size_t w,
                                             std::size_t negatives_per_positive, std::uint64_t rng_seed);

std::vector<InstructionPairSample> dui_pairs(const ingest::FunctionRecord& rec,
                                             std::size_t negatives_per_positive, std::uint64_t rng_seed);

/// seed xor hash(function id): independent per-function streams.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& function_id);

std::string to_json_line(const InfillingSample& s, const std::string& function_id);
std::string to_json_line(const InstructionPairSample& s, const std::string& function_id);

}  // namespace epitome::pretrain
