#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "epitome/param_store.hpp"

namespace epitome::ad {

class Tape;

/// Handle to a node on a Tape. Rows index positions, columns index features.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a computation as it executes and replays it backwards. Parameters
/// enter through param(); backward() followed by accumulate_into() adds their
/// gradients to the ParamStore.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self, const Matrix& grad_out)>;

  Var constant(Matrix value);
  Var leaf(Matrix value);
  Var param(const ParamStore& store, const std::string& name);

  void backward(const Var& loss);
  void accumulate_into(ParamStore& store) const;

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(const Var& v) const { return nodes_[v.id()].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Names of the parameters bound through param(), sorted.
  std::vector<std::string> param_names() const;

  /// Adds g to the gradient of node `id` when it requires one.
  void accumulate(std::size_t id, const Matrix& g);
  /// Adds g into the block of node `id` starting at (row, col).
  void accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col, const Matrix& g);
  /// Adds row i of g into row rows[i] of node `id`.
  void accumulate_rows(std::size_t id, const std::vector<int>& rows, const Matrix& g);
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  /// Piecewise ops (relu, max-pool) fold their branch decisions into a hash
  /// while tracking is on, so two evaluations can be compared for kinks.
  void track_branches(bool on) { track_branches_ = on; }
  bool tracking_branches() const { return track_branches_; }
  void mix_branch(std::uint64_t v);
  std::uint64_t branch_signature() const { return branch_signature_; }
  Var push(Matrix value, const std::vector<Var>& inputs, Backward backward);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
  bool track_branches_ = false;
  std::uint64_t branch_signature_ = 1469598103934665603ULL;
};

// ---- operations ------------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (n x c) + row (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// x W + b for x (n x in), W (in x out), b (1 x out).
Var affine(const Var& x, const Var& w, const Var& b);

Var relu(const Var& a);
Var tanh(const Var& a);
Var transpose(const Var& a);

/// Row-wise softmax of a + mask, where mask is a constant (use -inf to block).
Var softmax_rows(const Var& a, const Matrix* additive_mask = nullptr);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var gather_rows(const Var& table, const std::vector<int>& ids);

Var mean_rows(const Var& a);
Var max_rows(const Var& a);
Var sum(const Var& a);

/// Sum over rows of -log softmax(logits)[target]; rows with target < 0 are skipped.
Var cross_entropy(const Var& logits, const std::vector<int>& targets);
/// Numerically stable binary cross-entropy on a 1x1 logit.
Var bce_with_logits(const Var& logit, double label);
/// Cosine similarity of two row vectors; throws on a zero-norm input.
Var cosine(const Var& a, const Var& b);

/// Inverted dropout with a mask drawn from rng.
Var dropout(const Var& a, double p, std::mt19937_64& rng);

/// Convolution over positions with average pooling. E is (m x d) with
/// m >= valid + width - 1; kernels is (n_k x width*d) with row-major blocks
/// per offset; bias is (1 x n_k). Returns (1 x n_k):
///   out[r] = mean_{j < valid} relu(sum_o K[r, o] . E[j + o] + b[r]).
Var conv_mean_pool(const Var& e, const Var& kernels, const Var& bias, Eigen::Index width, Eigen::Index valid);

}  // namespace epitome::ad
