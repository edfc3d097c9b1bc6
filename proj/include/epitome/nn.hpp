#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "epitome/autodiff.hpp"
#include "epitome/param_store.hpp"

namespace epitome::nn {

/// Everything a forward pass needs besides its inputs.
struct Context {
  ad::Tape& tape;
  const ParamStore& params;
  bool training = false;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;

  ad::Var p(const std::string& name) const { return tape.param(params, name); }
  ad::Var drop(const ad::Var& x) const;
};

/// Registers `<prefix>.W` (in x out, fan-in uniform) and `<prefix>.b` (zeros).
void add_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out);
/// Registers `<prefix>.gamma` (ones) and `<prefix>.beta` (zeros).
void add_layer_norm(ParamStore& store, const std::string& prefix, Eigen::Index dim);
/// Registers q, v and o projections under `<prefix>.{q,v,o}` and a bias-free `<prefix>.k.W`.
void add_attention(ParamStore& store, const std::string& prefix, Eigen::Index dim);

ad::Var linear(const Context& ctx, const std::string& prefix, const ad::Var& x);
ad::Var layer_norm(const Context& ctx, const std::string& prefix, const ad::Var& x);

/// Additive attention masks: 0 where attention is allowed, -inf where blocked.
Matrix key_padding_mask(Eigen::Index queries, const std::vector<bool>& key_valid);
Matrix causal_mask(Eigen::Index n);

/// Multi-head scaled dot-product attention of `query` (n x d) over `memory`
/// (m x d). When `weights_out` is given, the per-head attention matrices are
/// appended to it.
ad::Var multi_head_attention(const Context& ctx, const std::string& prefix, const ad::Var& query,
                             const ad::Var& memory, int heads, const Matrix* mask,
                             std::vector<Matrix>* weights_out = nullptr);

/// relu(x W1 + b1) W2 + b2 with `<prefix>.ff1` and `<prefix>.ff2`.
ad::Var feed_forward(const Context& ctx, const std::string& prefix, const ad::Var& x);

}  // namespace epitome::nn
