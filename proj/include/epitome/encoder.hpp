#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "epitome/autodiff.hpp"
#include "epitome/ingest.hpp"
#include "epitome/nn.hpp"
#include "epitome/param_store.hpp"
#include "epitome/pretrain_data.hpp"

namespace epitome::encoder {

struct EncoderConfig {
  int d_token = 128;
  int n_layers = 6;
  int n_heads = 8;
  int d_hidden = 256;
  int gnn_layers = 2;
  int gnn_hops = 2;
  std::vector<int> conv_widths{2, 3, 4};
  int kernels_per_width = 32;
  double dropout = 0.1;
  int max_len = 512;
  int decoder_layers = 2;
  int max_name_len = 16;

  static EncoderConfig toy();
  /// Throws on violated invariants.
  void validate() const;
  int conv_output_dim() const { return static_cast<int>(conv_widths.size()) * kernels_per_width; }
  int max_conv_width() const;

  /// Flat key=value text, one pair per line.
  std::string to_text() const;
  static EncoderConfig from_text(const std::string& text);
  /// Sets one key; false when the key is not an encoder key.
  bool apply(const std::string& key, const std::string& value);
  bool operator==(const EncoderConfig&) const = default;
};

// ---- assembly vocabulary ------------------------------------------------------

class AsmVocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kEndSpan = 5;

  AsmVocabulary();
  /// Tokens seen at least min_count times in the records, in sorted order after the specials.
  static AsmVocabulary build(const std::vector<ingest::FunctionRecord>& records, std::size_t min_count = 1);

  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  std::vector<int> encode(const std::vector<std::string>& tokens) const;

  /// TSV `token<TAB>id`.
  void save(const std::filesystem::path& path) const;
  static AsmVocabulary load(const std::filesystem::path& path);

 private:
  void push(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// ---- parameters -------------------------------------------------------------------

/// Embeddings, transformer, conv kernels and GNN weights.
void init_encoder_params(ParamStore& store, const EncoderConfig& config, std::size_t asm_vocab_size);
/// Infilling and pair-classification heads used only during pretraining.
void init_alm_params(ParamStore& store, const EncoderConfig& config, std::size_t asm_vocab_size);

// ---- conv node vectors ---------------------------------------------------------------

struct ConvKernel {
  Matrix weights;  // d x w
  double bias = 0.0;
};

/// Plain evaluation over a d x m embedding matrix. Inputs shorter than the
/// widest kernel are right-padded with `pad_column` (zeros when empty); the
/// average runs over min(m, m_pad - w + 1) window positions.
Eigen::VectorXd conv_node_vector(const Matrix& e, const std::vector<ConvKernel>& kernels,
                                 const Eigen::VectorXd& pad_column = {});

/// Node vector for one instruction's token ids from the store's kernels.
ad::Var conv_node_vector(const nn::Context& ctx, const EncoderConfig& config, const std::vector<int>& token_ids);

// ---- transformer ----------------------------------------------------------------------

struct TransformerOutput {
  ad::Var states;  // n x d_hidden
  ad::Var h_inst;  // 1 x d_hidden, mean over non-pad positions
  /// attention[layer * n_heads + head] is n x n, rows summing to 1.
  std::vector<Matrix> attention;
  std::size_t truncated = 0;
};

/// Ids equal to AsmVocabulary::kPad are masked as keys and excluded from
/// h_inst. `segments`, when non-empty, selects segment embeddings 0/1.
TransformerOutput transformer_encode(const nn::Context& ctx, const EncoderConfig& config, std::vector<int> ids,
                                     std::vector<int> segments = {});

// ---- graph ------------------------------------------------------------------------------

/// Row-normalized k-hop aggregation matrix: row v averages over N_v^k; empty
/// neighborhoods give zero rows.
Matrix khop_mean_matrix(const ingest::FineGrainedCfg& cfg, std::size_t k);

/// L layers of K-hop message passing with parameters `<prefix>.l<l>.k<k>.{W,b}`.
ad::Var khop_message_pass(const nn::Context& ctx, const ingest::FineGrainedCfg& cfg, const ad::Var& x, int layers,
                          int hops, const std::string& prefix = "gnn");

ad::Var readout(const ad::Var& node_states);

// ---- full encoder ---------------------------------------------------------------------------

struct FunctionEncoding {
  ad::Var node_states;
  ad::Var h_g;
  ad::Var h_inst;
  ad::Var token_states;
  /// [h_G] followed by token states: (1 + tokens) x d_hidden.
  ad::Var emb;
  std::size_t truncated = 0;
};

/// Expects a normalized record; the name and other metadata are ignored.
FunctionEncoding encode_function(const nn::Context& ctx, const EncoderConfig& config, const AsmVocabulary& vocab,
                                 const ingest::FunctionRecord& rec);

/// Flattened instruction tokens as ids, capped at max_len.
std::vector<int> function_token_ids(const AsmVocabulary& vocab, const ingest::FunctionRecord& rec, int max_len,
                                    std::size_t* truncated = nullptr);

// ---- pretraining losses ----------------------------------------------------------------------

using AlmSample = std::variant<pretrain::InfillingSample, pretrain::InstructionPairSample>;

inline constexpr int kMaxSpanOffset = 16;

struct AlmLoss {
  ad::Var total;
  double infill = 0.0;
  double cdi = 0.0;
  double dui = 0.0;
  std::size_t infill_targets = 0;
  std::size_t cdi_samples = 0;
  std::size_t dui_samples = 0;
};

/// Mean infilling cross-entropy per predicted token plus mean BCE per pair task,
/// summed over the tasks present.
AlmLoss alm_losses(const nn::Context& ctx, const EncoderConfig& config, const AsmVocabulary& vocab,
                   const std::vector<AlmSample>& batch);

/// Ids for `[CLS] a [SEP] b [SEP]` and matching segment ids.
std::pair<std::vector<int>, std::vector<int>> pair_input(const AsmVocabulary& vocab,
                                                          const pretrain::InstructionPairSample& s);

}  // namespace epitome::encoder
