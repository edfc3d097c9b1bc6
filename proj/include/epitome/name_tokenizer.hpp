#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace epitome::tokenizer {

/// Sorted cut positions; position p cuts between characters p-1 and p.
using Boundaries = std::set<std::size_t>;

/// camelCase, snake_case, digit-run and whitespace splitting. Digit runs are
/// kept as their own segments; output is lowercased.
std::vector<std::string> split_by_convention(std::string_view name);

/// Segments a string at the given cuts.
std::vector<std::string> apply_boundaries(std::string_view s, const Boundaries& cuts);

// ---- transition-freedom model ----------------------------------------------

struct TfModel {
  std::size_t max_n = 0;
  std::unordered_map<std::string, std::uint64_t> ngram_counts;
  std::unordered_map<std::string, std::map<char, std::uint64_t>> forward_tf;
  std::unordered_map<std::string, std::map<char, std::uint64_t>> backward_tf;

  bool empty() const { return ngram_counts.empty(); }
};

TfModel train_tf_model(const std::vector<std::string>& corpus, std::size_t max_n);

/// Fraction of the largest positive peak a position must reach to become a cut.
inline constexpr double kTfPeakThreshold = 0.5;

Boundaries tf_tokenize(const TfModel& model, std::string_view name,
                       double threshold = kTfPeakThreshold);

// ---- unigram language model -------------------------------------------------

struct UnigramModel {
  std::unordered_map<std::string, double> label_probs;
  std::size_t max_label_len = 0;

  double probability(std::string_view label) const;
};

UnigramModel train_unigram(const std::vector<std::vector<std::string>>& corpus);

/// Forward maximum match.
Boundaries unigram_tokenize(const UnigramModel& model, std::string_view name);

// ---- rule-based dynamic program ---------------------------------------------

struct RuleLexicon {
  std::set<std::string> words;
  std::map<std::string, std::string> abbreviations;

  void add_word(std::string word);
  void add_abbreviation(std::string short_form, std::string full_form);
  /// Word or abbreviation key.
  bool contains(std::string_view s) const;
  std::size_t max_entry_length() const { return max_len_; }

  /// TSV: `word` or `abbrev<TAB>expansion`; blank lines and '#' comments skipped.
  static RuleLexicon load(const std::filesystem::path& path);

 private:
  std::size_t max_len_ = 0;
};

/// Maximizes covered length, then minimizes the segment count, then picks the
/// lexicographically earliest cut set. Uncovered characters become
/// single-character segments.
Boundaries rule_tokenize(const RuleLexicon& lexicon, std::string_view name);

// ---- voting -------------------------------------------------------------------

enum class Voter { tf, unigram, rule };

struct VoteDetail {
  Boundaries final_list;
  Voter pending = Voter::rule;
  Boundaries result;
};

VoteDetail vote_detail(const Boundaries& b_tf, const Boundaries& b_uni, const Boundaries& b_rule);
Boundaries vote(const Boundaries& b_tf, const Boundaries& b_uni, const Boundaries& b_rule);

// ---- full pipeline ------------------------------------------------------------

struct TokenizerPipeline {
  TfModel tf;
  UnigramModel unigram;
  RuleLexicon lexicon;

  /// corpus_lines: one whitespace-tokenized name per line. The unigram model
  /// trains on the tokens; the transition-freedom model on the concatenations.
  static TokenizerPipeline build(const std::vector<std::string>& corpus_lines, RuleLexicon lexicon,
                                 std::size_t max_n = 5);
  static TokenizerPipeline load(const std::filesystem::path& corpus,
                                const std::filesystem::path& lexicon, std::size_t max_n = 5);
};

struct TokenizationResult {
  std::string name;
  /// Convention-stripped, lowercased name; all boundaries index into it.
  std::string stripped;
  Boundaries boundaries_tf;
  Boundaries boundaries_unigram;
  Boundaries boundaries_rule;
  Boundaries final_boundaries;
  std::vector<std::string> labels;
};

/// Segments longer than this that are not lexicon entries go to the ensemble.
inline constexpr std::size_t kSuspectMinLength = 4;

TokenizationResult tokenize_name(const TokenizerPipeline& pipeline, std::string_view name);

std::vector<std::string> expand_abbreviations(const std::vector<std::string>& labels,
                                              const RuleLexicon& lexicon);

}  // namespace epitome::tokenizer
