#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "epitome/autodiff.hpp"
#include "epitome/encoder.hpp"
#include "epitome/ingest.hpp"
#include "epitome/nn.hpp"
#include "epitome/param_store.hpp"

namespace epitome::tasks {

class NameVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSpecials = 4;

  NameVocabulary();
  /// Labels in lexicographic order after the specials.
  static NameVocabulary build(const std::vector<std::vector<std::string>>& label_sequences);

  bool contains(const std::string& label) const { return ids_.count(label) != 0u; }
  int id(const std::string& label) const;
  const std::string& label(int id) const { return labels_.at(static_cast<std::size_t>(id)); }
  std::size_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return labels_.size(); }
  std::vector<int> encode(const std::vector<std::string>& labels) const;
  /// Non-special labels.
  std::vector<std::string> labels() const;

  /// TSV `label<TAB>id<TAB>count`.
  void save(const std::filesystem::path& path) const;
  static NameVocabulary load(const std::filesystem::path& path);

 private:
  void push(const std::string& label, std::size_t count);
  std::vector<std::string> labels_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, int> ids_;
};

/// Decoder, output projection and similarity head parameters.
void init_task_params(ParamStore& store, const encoder::EncoderConfig& config, std::size_t name_vocab_size);

// ---- name generation ------------------------------------------------------------

/// Logits (prefix length x |V|) of a causal decoder cross-attending over emb.
ad::Var decoder_logits(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                       const std::vector<int>& prefix);

/// P_t for the position after `prefix`, which must start with BOS.
Eigen::VectorXd decode_step_probs(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                                  const std::vector<int>& prefix);

/// Teacher-forced -sum log P_t[y_t] over labels with EOS appended. PAD labels
/// are skipped; sequences longer than max_name_len are cut.
ad::Var name_loss(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                  const std::vector<int>& labels);

/// Greedy decoding; PAD, BOS and UNK are never emitted and ties go to the lowest id.
std::vector<std::string> predict_name(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                                      const NameVocabulary& vocab, std::size_t max_len);

// ---- similarity ---------------------------------------------------------------------

inline constexpr double kDefaultMargin = 0.5;

struct SimilarityHeadParams {
  Matrix w1;
  Eigen::RowVectorXd b1;
  Matrix w2;
  Eigen::RowVectorXd b2;
  double margin = kDefaultMargin;

  static SimilarityHeadParams from_store(const ParamStore& store, double margin = kDefaultMargin);
};

/// tanh of the per-column max over emb rows.
ad::Var similarity_h(const ad::Var& emb);
Eigen::RowVectorXd similarity_h(const Matrix& emb);

/// cos(h1 W1 + b1, h2 W2 + b2) from the store's `sim.h1` / `sim.h2` heads.
ad::Var score(const nn::Context& ctx, const ad::Var& h1, const ad::Var& h2);
double score(const Eigen::RowVectorXd& h1, const Eigen::RowVectorXd& h2, const SimilarityHeadParams& head);

/// Default: max(M - (f_pos - f_neg), 0). Literal: max(f_pos - f_neg - M, 0).
double ranking_loss(double f_pos, double f_neg, double margin, bool paper_literal = false);
ad::Var ranking_loss(const ad::Var& f_pos, const ad::Var& f_neg, double margin, bool paper_literal = false);

double joint_loss(double j_cg, double j_cs, double lambda1, double lambda2);
ad::Var joint_loss(const ad::Var& j_cg, const ad::Var& j_cs, double lambda1, double lambda2);

// ---- triplets -------------------------------------------------------------------------

struct TrainTriplet {
  std::string anchor_id;
  std::string positive_id;
  std::string negative_id;
  bool operator==(const TrainTriplet&) const = default;
};

/// Positive: same source, different optimization level. Negative: a record
/// whose preprocessed label sequence differs from the anchor's.
class TripletSampler {
 public:
  /// labels[i] is the preprocessed name of records[i].
  TripletSampler(const std::vector<ingest::FunctionRecord>& records,
                 const std::vector<std::vector<std::string>>& labels);

  TrainTriplet sample(std::mt19937_64& rng) const;
  std::size_t eligible_anchors() const { return anchors_.size(); }

 private:
  const std::vector<ingest::FunctionRecord>* records_;
  const std::vector<std::vector<std::string>>* labels_;
  std::vector<std::size_t> anchors_;
  std::vector<std::vector<std::size_t>> positives_;
  std::map<std::vector<std::string>, std::vector<std::size_t>> by_name_;
};

TrainTriplet sample_triplet(const std::vector<ingest::FunctionRecord>& records,
                            const std::vector<std::vector<std::string>>& labels, std::uint64_t rng_seed);

}  // namespace epitome::tasks
