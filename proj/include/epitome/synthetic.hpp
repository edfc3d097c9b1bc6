#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "epitome/ingest.hpp"

namespace epitome::synthetic {

/// Program and English words used for synthetic names.
const std::vector<std::string>& words();
/// (short form, expansion) pairs.
const std::vector<std::pair<std::string, std::string>>& abbreviations();

enum class NameStyle { camel, pascal, snake, lower, mixed };

/// Renders labels as one identifier.
std::string render_name(const std::vector<std::string>& labels, NameStyle style);

struct SyntheticName {
  std::string raw;
  /// Intended labels after abbreviation expansion.
  std::vector<std::string> labels;
};

/// Names of 2-3 words in mixed styles; words are occasionally abbreviated.
std::vector<SyntheticName> synthetic_names(std::size_t count, std::uint64_t seed);

/// Whitespace-tokenized lines for the tokenizer corpus.
std::vector<std::string> synthetic_name_corpus(std::size_t lines, std::uint64_t seed);

struct DatasetOptions {
  std::size_t sources = 20;
  std::vector<ingest::OptLevel> variants{ingest::OptLevel::O0, ingest::OptLevel::O2, ingest::OptLevel::O3};
  ingest::Arch arch = ingest::Arch::x86;
  std::uint64_t seed = 1;
};

/// One record per (source, variant). Records of a source share a name and a
/// body; variants differ the way optimization levels reshape code. Names are
/// verb/noun pairs whose words each contribute a characteristic instruction
/// motif, so names are predictable from code.
std::vector<ingest::FunctionRecord> synthetic_dataset(const DatasetOptions& options);

}  // namespace epitome::synthetic
