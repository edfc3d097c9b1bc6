#include "epitome/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "epitome/error.hpp"

namespace epitome::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw Error("scalar() on a non-1x1 value");
  return v(0, 0);
}

// ---- tape --------------------------------------------------------------------

Var Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), false, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back({std::move(value), Matrix(), true, nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = params_.find(name); it != params_.end()) return {this, it->second};
  Var v = leaf(store.value(name));
  params_.emplace(name, v.id());
  return v;
}

Var Tape::push(Matrix value, const std::vector<Var>& inputs, Backward backward) {
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw Error("operands belong to different tapes");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back({std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

std::vector<std::string> Tape::param_names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  std::sort(out.begin(), out.end());
  return out;
}

void Tape::mix_branch(std::uint64_t v) {
  branch_signature_ ^= v;
  branch_signature_ *= 1099511628211ULL;
}

void Tape::accumulate_block(std::size_t id, Eigen::Index row, Eigen::Index col, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad.block(row, col, g.rows(), g.cols()) += g;
}

void Tape::accumulate_rows(std::size_t id, const std::vector<int>& rows, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) n.grad.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("loss belongs to a different tape");
  const Matrix& v = nodes_[loss.id()].value;
  if (v.rows() != 1 || v.cols() != 1) throw Error("backward() needs a 1x1 loss");
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the closure may append to nodes_ only in forward, never here, but
    // accumulate() on inputs must not alias the gradient being read.
    const Matrix g = n.grad;
    n.backward(*this, i, g);
  }
}

void Tape::accumulate_into(ParamStore& store) const {
  for (const auto& [name, id] : params_) {
    const Matrix& g = nodes_[id].grad;
    if (g.size() == 0) continue;
    store.grad(name) += g;
  }
}

// ---- elementwise and linear algebra --------------------------------------------

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimensions differ");
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape()->push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape()->push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape()->push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, std::size_t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var scale(const Var& a, double s) {
  const auto ia = a.id();
  return a.tape()->push(a.value() * s, {a}, [ia, s](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: bias shape mismatch");
  const auto ia = a.id();
  const auto ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(out), {a, row}, [ia, ir](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var affine(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var relu(const Var& a) {
  const auto ia = a.id();
  if (a.tape()->tracking_branches()) {
    const Matrix& x = a.value();
    for (Eigen::Index i = 0; i < x.size(); ++i) a.tape()->mix_branch(x.data()[i] > 0.0 ? 1 : 2);
  }
  return a.tape()->push(a.value().cwiseMax(0.0), {a}, [ia](Tape& t, std::size_t, const Matrix& g) {
    const Matrix& x = t.value(ia);
    t.accumulate(ia, (x.array() > 0.0).select(g, 0.0));
  });
}

Var tanh(const Var& a) {
  const auto ia = a.id();
  return a.tape()->push(a.value().array().tanh().matrix(), {a}, [ia](Tape& t, std::size_t self, const Matrix& g) {
    const Matrix& y = t.value(self);
    t.accumulate(ia, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var transpose(const Var& a) {
  const auto ia = a.id();
  return a.tape()->push(a.value().transpose(), {a},
                        [ia](Tape& t, std::size_t, const Matrix& g) { t.accumulate(ia, g.transpose()); });
}

Var softmax_rows(const Var& a, const Matrix* additive_mask) {
  Matrix z = a.value();
  if (additive_mask != nullptr) {
    if (additive_mask->rows() != z.rows() || additive_mask->cols() != z.cols()) throw Error("softmax mask shape mismatch");
    z += *additive_mask;
  }
  Matrix y(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    if (!std::isfinite(m)) throw Error("softmax row is fully masked");
    Eigen::RowVectorXd e = (z.row(r).array() - m).exp().matrix();
    y.row(r) = e / e.sum();
  }
  const auto ia = a.id();
  return a.tape()->push(std::move(y), {a}, [ia](Tape& t, std::size_t self, const Matrix& g) {
    const Matrix& y = t.value(self);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ia, ((g.colwise() - dot).array() * y.array()).matrix());
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Matrix& v = x.value();
  const auto d = v.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
    throw Error("layer_norm: parameter shape mismatch");
  Matrix xhat(v.rows(), d);
  Eigen::VectorXd inv_std(v.rows());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  const auto ix = x.id();
  const auto ig = gamma.id();
  const auto ib = beta.id();
  return x.tape()->push(std::move(out), {x, gamma, beta},
                        [ix, ig, ib, xhat, inv_std](Tape& t, std::size_t, const Matrix& g) {
                          if (t.requires_grad(ig)) t.accumulate(ig, g.cwiseProduct(xhat).colwise().sum());
                          if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                          if (!t.requires_grad(ix)) return;
                          const Eigen::RowVectorXd gam = t.value(ig).row(0);
                          const Matrix dxhat = (g.array().rowwise() * gam.array()).matrix();
                          const double n = static_cast<double>(g.cols());
                          Matrix dx(g.rows(), g.cols());
                          for (Eigen::Index r = 0; r < g.rows(); ++r) {
                            const double mean_d = dxhat.row(r).sum() / n;
                            const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
                            dx.row(r) = inv_std(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx).matrix();
                          }
                          t.accumulate(ix, dx);
                        });
}

// ---- structural ----------------------------------------------------------------

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols of nothing");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.cols();
  }
  return parts.front().tape()->push(std::move(out), parts, [layout](Tape& t, std::size_t, const Matrix& g) {
    for (const auto& [id, start] : layout) {
      t.accumulate(id, g.middleCols(start, t.value(id).cols()));
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows of nothing");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id(), at);
    at += p.rows();
  }
  return parts.front().tape()->push(std::move(out), parts, [layout](Tape& t, std::size_t, const Matrix& g) {
    for (const auto& [id, start] : layout) {
      t.accumulate(id, g.middleRows(start, t.value(id).rows()));
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw Error("slice_rows out of range");
  const auto ia = a.id();
  return a.tape()->push(a.value().middleRows(start, count), {a},
                        [ia, start](Tape& t, std::size_t, const Matrix& g) { t.accumulate_block(ia, start, 0, g); });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error("slice_cols out of range");
  const auto ia = a.id();
  return a.tape()->push(a.value().middleCols(start, count), {a},
                        [ia, start](Tape& t, std::size_t, const Matrix& g) { t.accumulate_block(ia, 0, start, g); });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw Error("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  const auto it = table.id();
  return table.tape()->push(std::move(out), {table},
                            [it, ids](Tape& t, std::size_t, const Matrix& g) { t.accumulate_rows(it, ids, g); });
}

// ---- reductions -------------------------------------------------------------------

Var mean_rows(const Var& a) {
  if (a.rows() == 0) throw Error("mean_rows of an empty matrix");
  const auto ia = a.id();
  const auto n = a.rows();
  return a.tape()->push(a.value().colwise().mean(), {a}, [ia, n](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, g.replicate(n, 1) / static_cast<double>(n));
  });
}

Var max_rows(const Var& a) {
  if (a.rows() == 0) throw Error("max_rows of an empty matrix");
  const Matrix& v = a.value();
  Matrix out(1, v.cols());
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index c = 0; c < v.cols(); ++c) {
    Eigen::Index r = 0;
    out(0, c) = v.col(c).maxCoeff(&r);
    arg[static_cast<std::size_t>(c)] = r;
    if (a.tape()->tracking_branches()) a.tape()->mix_branch(static_cast<std::uint64_t>(r) + 3);
  }
  const auto ia = a.id();
  const auto rows = v.rows();
  return a.tape()->push(std::move(out), {a}, [ia, arg, rows](Tape& t, std::size_t, const Matrix& g) {
    Matrix full = Matrix::Zero(rows, g.cols());
    for (Eigen::Index c = 0; c < g.cols(); ++c) full(arg[static_cast<std::size_t>(c)], c) = g(0, c);
    t.accumulate(ia, full);
  });
}

Var sum(const Var& a) {
  const auto ia = a.id();
  const auto rows = a.rows();
  const auto cols = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->push(std::move(out), {a}, [ia, rows, cols](Tape& t, std::size_t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

// ---- losses --------------------------------------------------------------------------

Var cross_entropy(const Var& logits, const std::vector<int>& targets) {
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) throw Error("cross_entropy: one target per row");
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    Eigen::RowVectorXd e = (z.row(r).array() - m).exp().matrix();
    const double s = e.sum();
    probs.row(r) = e / s;
    const int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0) continue;
    if (tgt >= z.cols()) throw Error("cross_entropy: target out of range");
    loss -= z(r, tgt) - m - std::log(s);
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  const auto il = logits.id();
  return logits.tape()->push(std::move(out), {logits}, [il, probs, targets](Tape& t, std::size_t, const Matrix& g) {
    Matrix d = probs;
    for (Eigen::Index r = 0; r < d.rows(); ++r) {
      const int tgt = targets[static_cast<std::size_t>(r)];
      if (tgt < 0) {
        d.row(r).setZero();
      } else {
        d(r, tgt) -= 1.0;
      }
    }
    t.accumulate(il, d * g(0, 0));
  });
}

Var bce_with_logits(const Var& logit, double label) {
  const double z = logit.scalar();
  Matrix out(1, 1);
  out(0, 0) = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  const auto il = logit.id();
  return logit.tape()->push(std::move(out), {logit}, [il, z, label](Tape& t, std::size_t, const Matrix& g) {
    const double sig = 1.0 / (1.0 + std::exp(-z));
    t.accumulate(il, Matrix::Constant(1, 1, (sig - label) * g(0, 0)));
  });
}

Var cosine(const Var& a, const Var& b) {
  check_same_shape(a, b, "cosine");
  if (a.rows() != 1) throw Error("cosine expects row vectors");
  const Eigen::RowVectorXd x = a.value().row(0);
  const Eigen::RowVectorXd y = b.value().row(0);
  const double nx = x.norm();
  const double ny = y.norm();
  if (nx < 1e-12 || ny < 1e-12) throw Error("degenerate projection");
  const double c = x.dot(y) / (nx * ny);
  const auto ia = a.id();
  const auto ib = b.id();
  return a.tape()->push(Matrix::Constant(1, 1, c), {a, b}, [=](Tape& t, std::size_t, const Matrix& g) {
    const double s = g(0, 0);
    if (t.requires_grad(ia)) t.accumulate(ia, s * (y / (nx * ny) - c * x / (nx * nx)));
    if (t.requires_grad(ib)) t.accumulate(ib, s * (x / (nx * ny) - c * y / (ny * ny)));
  });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw Error("dropout probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(a, a.tape()->constant(std::move(mask)));
}

Var conv_mean_pool(const Var& e, const Var& kernels, const Var& bias, Eigen::Index width, Eigen::Index valid) {
  const Matrix& ev = e.value();
  const Matrix& kv = kernels.value();
  const Eigen::Index d = ev.cols();
  const Eigen::Index nk = kv.rows();
  if (width < 1 || valid < 1) throw Error("conv_mean_pool: width and valid count must be positive");
  if (kv.cols() != width * d) throw Error("conv_mean_pool: kernel shape mismatch");
  if (bias.rows() != 1 || bias.cols() != nk) throw Error("conv_mean_pool: bias shape mismatch");
  if (ev.rows() < valid + width - 1) throw Error("conv_mean_pool: input shorter than the receptive field");

  Matrix pre(valid, nk);
  for (Eigen::Index j = 0; j < valid; ++j) {
    for (Eigen::Index r = 0; r < nk; ++r) {
      double z = bias.value()(0, r);
      for (Eigen::Index o = 0; o < width; ++o) z += kv.row(r).segment(o * d, d).dot(ev.row(j + o));
      pre(j, r) = z;
      if (e.tape()->tracking_branches()) e.tape()->mix_branch(z > 0.0 ? 1 : 2);
    }
  }
  Matrix out = pre.cwiseMax(0.0).colwise().mean();
  const auto ie = e.id();
  const auto ik = kernels.id();
  const auto ib = bias.id();
  return e.tape()->push(std::move(out), {e, kernels, bias},
                        [=](Tape& t, std::size_t, const Matrix& g) {
                          const Matrix& ev2 = t.value(ie);
                          const Matrix& kv2 = t.value(ik);
                          Matrix de = Matrix::Zero(ev2.rows(), ev2.cols());
                          Matrix dk = Matrix::Zero(kv2.rows(), kv2.cols());
                          Matrix db = Matrix::Zero(1, nk);
                          for (Eigen::Index j = 0; j < valid; ++j) {
                            for (Eigen::Index r = 0; r < nk; ++r) {
                              if (pre(j, r) <= 0.0) continue;
                              const double df = g(0, r) / static_cast<double>(valid);
                              db(0, r) += df;
                              for (Eigen::Index o = 0; o < width; ++o) {
                                dk.row(r).segment(o * d, d) += df * ev2.row(j + o);
                                de.row(j + o) += df * kv2.row(r).segment(o * d, d);
                              }
                            }
                          }
                          t.accumulate(ie, de);
                          t.accumulate(ik, dk);
                          t.accumulate(ib, db);
                        });
}

}  // namespace epitome::ad
