#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace epitome::relations {

/// Porter steps 1a, 1b and 2. Labels of two characters or fewer are returned unchanged.
std::string stem(std::string_view label);

// ---- embeddings ----------------------------------------------------------------

enum class EmbeddingKind { skipgram, subword };

struct EmbeddingConfig {
  int dim = 32;
  int window = 2;
  int negatives = 5;
  int epochs = 50;
  std::uint64_t seed = 1;
  double learning_rate = 0.05;
  int min_ngram = 3;
  int max_ngram = 6;
  std::size_t buckets = 1u << 16;
};

class EmbeddingTable {
 public:
  EmbeddingKind kind = EmbeddingKind::skipgram;
  std::vector<std::string> labels;
  std::unordered_map<std::string, std::size_t> vocab;
  /// One row per vocabulary label (composed vectors for the subword kind).
  Eigen::MatrixXd vectors;
  /// Mean training loss per epoch.
  std::vector<double> epoch_loss;

  int dim() const { return static_cast<int>(vectors.cols()); }
  bool contains(std::string_view label) const { return vocab.count(std::string(label)) != 0u; }

  /// Vector for any label. Skip-gram tables throw for unknown labels; subword
  /// tables compose out-of-vocabulary labels from their character n-grams.
  Eigen::VectorXd vector(std::string_view label) const;

  // Subword internals, populated only for EmbeddingKind::subword.
  Eigen::MatrixXd word_vectors;
  Eigen::MatrixXd ngram_vectors;
  int min_ngram = 3;
  int max_ngram = 6;
  std::vector<std::size_t> subword_ids(std::string_view label) const;
};

EmbeddingTable train_skipgram(const std::vector<std::vector<std::string>>& corpus,
                              const EmbeddingConfig& config);
EmbeddingTable train_subword_embeddings(const std::vector<std::vector<std::string>>& corpus,
                                        const EmbeddingConfig& config);

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Top-k cosine neighbors of `label` within `table`, self excluded, ordered by
/// decreasing similarity with ties broken by vocabulary order.
std::vector<std::string> nearest_neighbors(const EmbeddingTable& table, std::string_view label,
                                           std::size_t k);

/// Top-10 from each table, concatenated; duplicates across tables retained.
std::vector<std::string> candidate_set(std::string_view label, const EmbeddingTable& sg,
                                       const EmbeddingTable& sw, std::size_t k = 10);

// ---- string relations -----------------------------------------------------------

/// Smith-Waterman local alignment score with match +1, mismatch -1, gap -1.
int smith_waterman_score(std::string_view a, std::string_view b);
/// Score normalized by the shorter length, in [0, 1].
double sw_relative_similarity(std::string_view a, std::string_view b);

inline constexpr double kSynonymThreshold = 2.0 / 3.0;

/// True iff one label is a proper prefix of the other.
bool is_abbreviation(std::string_view t, std::string_view w);

enum class RelationKind { none, synonym, abbreviation, related };
std::string_view to_string(RelationKind k);
RelationKind parse_relation_kind(std::string_view s);

struct Relation {
  std::string a;
  std::string b;
  RelationKind kind = RelationKind::none;
  bool operator==(const Relation&) const = default;
};

/// Unordered external relation pairs (the WordNet stand-in).
class ExternalRelations {
 public:
  void add(std::string a, std::string b);
  bool contains(std::string_view a, std::string_view b) const;
  std::size_t size() const { return pairs_.size(); }
  /// TSV `label_a<TAB>label_b[<TAB>kind]`.
  static ExternalRelations load(const std::filesystem::path& path);

 private:
  std::set<std::pair<std::string, std::string>> pairs_;
};

RelationKind classify_relation(std::string_view t, std::string_view c,
                               const ExternalRelations* external = nullptr);

// ---- grouping -----------------------------------------------------------------------

struct RelationLexicon {
  std::map<std::string, std::string> canonical;
  std::vector<Relation> relations;

  /// Canonical form of a label; labels outside the lexicon map to themselves.
  std::string canonicalize(std::string_view label) const;
  std::vector<std::string> canonicalize(const std::vector<std::string>& labels) const;

  void save(const std::filesystem::path& relations_path,
            const std::filesystem::path& canonical_path) const;
  /// Reads a TSV `label<TAB>canonical` file as written by save().
  static RelationLexicon load_canonical(const std::filesystem::path& canonical_path);
};

struct GroupingOptions {
  std::size_t candidates_per_table = 10;
  const ExternalRelations* external = nullptr;
  /// Pairs rejected by review; checked in both orders.
  const ExternalRelations* deny = nullptr;
};

RelationLexicon build_relation_groups(const std::vector<std::string>& vocab,
                                      const EmbeddingTable* sg, const EmbeddingTable* sw,
                                      const GroupingOptions& options = {});

}  // namespace epitome::relations
