#include "epitome/nn.hpp"

#include <cmath>
#include <limits>

#include "epitome/error.hpp"

namespace epitome::nn {

ad::Var Context::drop(const ad::Var& x) const {
  if (!training || dropout <= 0.0) return x;
  if (rng == nullptr) throw Error("training-mode forward pass needs an rng");
  return ad::dropout(x, dropout, *rng);
}

void add_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out) {
  store.add(prefix + ".W", in, out, Init::uniform_fan_in);
  store.add(prefix + ".b", 1, out, Init::zeros);
}

void add_layer_norm(ParamStore& store, const std::string& prefix, Eigen::Index dim) {
  store.add(prefix + ".gamma", 1, dim, Init::ones);
  store.add(prefix + ".beta", 1, dim, Init::zeros);
}

void add_attention(ParamStore& store, const std::string& prefix, Eigen::Index dim) {
  for (const char* part : {".q", ".v", ".o"}) add_linear(store, prefix + part, dim, dim);
  store.add(prefix + ".k.W", dim, dim, Init::uniform_fan_in);
}

ad::Var linear(const Context& ctx, const std::string& prefix, const ad::Var& x) {
  return ad::affine(x, ctx.p(prefix + ".W"), ctx.p(prefix + ".b"));
}

ad::Var layer_norm(const Context& ctx, const std::string& prefix, const ad::Var& x) {
  return ad::layer_norm(x, ctx.p(prefix + ".gamma"), ctx.p(prefix + ".beta"));
}

Matrix key_padding_mask(Eigen::Index queries, const std::vector<bool>& key_valid) {
  Matrix m = Matrix::Zero(queries, static_cast<Eigen::Index>(key_valid.size()));
  for (std::size_t j = 0; j < key_valid.size(); ++j) {
    if (!key_valid[j]) m.col(static_cast<Eigen::Index>(j)).setConstant(-std::numeric_limits<double>::infinity());
  }
  return m;
}

Matrix causal_mask(Eigen::Index n) {
  Matrix m = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = -std::numeric_limits<double>::infinity();
  }
  return m;
}

ad::Var multi_head_attention(const Context& ctx, const std::string& prefix, const ad::Var& query,
                             const ad::Var& memory, int heads, const Matrix* mask,
                             std::vector<Matrix>* weights_out) {
  const Eigen::Index d = query.cols();
  if (heads < 1 || d % heads != 0) throw Error("model width must be divisible by the head count");
  const Eigen::Index dh = d / heads;
  const ad::Var q = linear(ctx, prefix + ".q", query);
  const ad::Var k = ad::matmul(memory, ctx.p(prefix + ".k.W"));
  const ad::Var v = linear(ctx, prefix + ".v", memory);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const ad::Var qh = ad::slice_cols(q, h * dh, dh);
    const ad::Var kh = ad::slice_cols(k, h * dh, dh);
    const ad::Var vh = ad::slice_cols(v, h * dh, dh);
    const ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), scale);
    const ad::Var attn = ad::softmax_rows(scores, mask);
    if (weights_out != nullptr) weights_out->push_back(attn.value());
    outs.push_back(ad::matmul(attn, vh));
  }
  return linear(ctx, prefix + ".o", ad::concat_cols(outs));
}

ad::Var feed_forward(const Context& ctx, const std::string& prefix, const ad::Var& x) {
  return linear(ctx, prefix + ".ff2", ad::relu(linear(ctx, prefix + ".ff1", x)));
}

}  // namespace epitome::nn
