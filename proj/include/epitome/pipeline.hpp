#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "epitome/ingest.hpp"
#include "epitome/label_relations.hpp"
#include "epitome/name_tokenizer.hpp"

namespace epitome::pipeline {

/// Name to training labels: ensemble tokenization, abbreviation expansion,
/// stemming and, when a canonical map is loaded, canonicalization.
struct LabelPreprocessor {
  tokenizer::TokenizerPipeline tokenizer;
  std::optional<relations::RelationLexicon> canonical;

  static LabelPreprocessor load(const std::filesystem::path& corpus, const std::filesystem::path& lexicon,
                                const std::filesystem::path& canonical_map = {});

  std::vector<std::string> operator()(std::string_view name) const;
};

/// Labels for every record, keyed by record id.
std::map<std::string, std::vector<std::string>> preprocess_records(const LabelPreprocessor& pre,
                                                                    const std::vector<ingest::FunctionRecord>& records,
                                                                    std::size_t jobs = 1);

}  // namespace epitome::pipeline
