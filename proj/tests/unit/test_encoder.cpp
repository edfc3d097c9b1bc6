#include <doctest.h>

#include <cmath>
#include <random>

#include "epitome/encoder.hpp"
#include "epitome/error.hpp"
#include "epitome/ingest.hpp"
#include "epitome/synthetic.hpp"
#include "support.hpp"

using namespace epitome;
using namespace epitome::encoder;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Direct loop version of every sliding window.
Eigen::VectorXd naive_conv(const Matrix& e, const std::vector<ConvKernel>& kernels) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(kernels.size()));
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    const auto& K = kernels[k].weights;
    const Eigen::Index positions = e.cols() - K.cols() + 1;
    double total = 0.0;
    for (Eigen::Index j = 0; j < positions; ++j) {
      double f = kernels[k].bias;
      for (Eigen::Index r = 0; r < K.rows(); ++r) {
        for (Eigen::Index c = 0; c < K.cols(); ++c) f += K(r, c) * e(r, j + c);
      }
      total += f > 0.0 ? f : 0.0;
    }
    out(static_cast<Eigen::Index>(k)) = total / static_cast<double>(positions);
  }
  return out;
}

std::vector<double> row_layer_norm(const std::vector<double>& x, const Matrix& gamma, const Matrix& beta) {
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * gamma(0, static_cast<Eigen::Index>(i)) + beta(0, static_cast<Eigen::Index>(i));
  return out;
}

using Rows = std::vector<std::vector<double>>;

Rows affine_rows(const Rows& x, const Matrix& w, const Matrix* b) {
  Rows out(x.size(), std::vector<double>(static_cast<std::size_t>(w.cols()), 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (Eigen::Index o = 0; o < w.cols(); ++o) {
      double acc = b != nullptr ? (*b)(0, o) : 0.0;
      for (Eigen::Index k = 0; k < w.rows(); ++k) acc += x[i][static_cast<std::size_t>(k)] * w(k, o);
      out[i][static_cast<std::size_t>(o)] = acc;
    }
  }
  return out;
}

// Single-layer transformer computed one scalar at a time.
Rows naive_transformer(const ParamStore& s, const EncoderConfig& c, const std::vector<int>& ids) {
  const auto n = ids.size();
  const auto d = static_cast<std::size_t>(c.d_hidden);
  Rows tok(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < c.d_token; ++k) tok[i].push_back(s.value("enc.tok.emb")(ids[i], k));
  }
  Rows h = affine_rows(tok, s.value("enc.in.W"), &s.value("enc.in.b"));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) h[i][k] += s.value("enc.pos.emb")(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  }
  const Rows q = affine_rows(h, s.value("enc.l0.attn.q.W"), &s.value("enc.l0.attn.q.b"));
  const Rows kk = affine_rows(h, s.value("enc.l0.attn.k.W"), nullptr);
  const Rows v = affine_rows(h, s.value("enc.l0.attn.v.W"), &s.value("enc.l0.attn.v.b"));
  const std::size_t dh = d / static_cast<std::size_t>(c.n_heads);
  Rows heads(n, std::vector<double>(d, 0.0));
  for (int head = 0; head < c.n_heads; ++head) {
    const std::size_t off = static_cast<std::size_t>(head) * dh;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> score(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t t = 0; t < dh; ++t) dot += q[i][off + t] * kk[j][off + t];
        score[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (auto& sc : score) z += (sc = std::exp(sc - mx));
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < dh; ++t) heads[i][off + t] += score[j] / z * v[j][off + t];
      }
    }
  }
  const Rows attn = affine_rows(heads, s.value("enc.l0.attn.o.W"), &s.value("enc.l0.attn.o.b"));
  Rows h1(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(d);
    for (std::size_t k = 0; k < d; ++k) r[k] = h[i][k] + attn[i][k];
    h1[i] = row_layer_norm(r, s.value("enc.l0.ln1.gamma"), s.value("enc.l0.ln1.beta"));
  }
  Rows ff = affine_rows(h1, s.value("enc.l0.ff1.W"), &s.value("enc.l0.ff1.b"));
  for (auto& r : ff) {
    for (auto& x : r) x = std::max(x, 0.0);
  }
  ff = affine_rows(ff, s.value("enc.l0.ff2.W"), &s.value("enc.l0.ff2.b"));
  Rows out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(d);
    for (std::size_t k = 0; k < d; ++k) r[k] = h1[i][k] + ff[i][k];
    out[i] = row_layer_norm(r, s.value("enc.l0.ln2.gamma"), s.value("enc.l0.ln2.beta"));
  }
  return out;
}

ingest::FineGrainedCfg random_graph(std::size_t n, std::mt19937_64& rng) {
  ingest::FineGrainedCfg g(n);
  for (std::size_t e = 0; e < 2 * n; ++e) {
    const auto a = rng() % n;
    const auto b = rng() % n;
    if (a != b) g.add_edge(a, b, ingest::EdgeKind::jump);
  }
  return g;
}

}  // namespace

TEST_CASE("config") {
  const auto toy = EncoderConfig::toy();
  CHECK(toy.d_token == 8);
  CHECK(toy.conv_output_dim() == 4);
  CHECK(EncoderConfig::from_text(toy.to_text()) == toy);
  CHECK_THROWS_AS(EncoderConfig::from_text("bogus=1"), Error);
  CHECK_THROWS_AS(EncoderConfig::from_text("n_heads=3\nd_hidden=16"), Error);
  CHECK_THROWS_AS(EncoderConfig::from_text("conv_widths=0"), Error);
  const EncoderConfig dflt;
  CHECK(dflt.d_token == 128);
  CHECK(dflt.n_layers == 6);
  CHECK(dflt.n_heads == 8);
  CHECK(dflt.d_hidden == 256);
  CHECK(dflt.gnn_layers == 2);
}

TEST_CASE("asm vocabulary") {
  const auto rec = testing::make_record("v", {{"mov", {"eax", "<imm>"}}, {"ret", {}}});
  const auto v = AsmVocabulary::build({rec});
  CHECK(v.size() == 6 + 4);
  CHECK(v.id("never") == AsmVocabulary::kUnk);
  CHECK(v.token(v.id("mov")) == "mov");
  const auto dir = testing::temp_dir("asmvocab");
  v.save(dir / "v.tsv");
  const auto back = AsmVocabulary::load(dir / "v.tsv");
  CHECK(back.size() == v.size());
  CHECK(back.id("ret") == v.id("ret"));
}

TEST_CASE("conv node vectors match a naive oracle") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
    const Eigen::Index m = 4 + static_cast<Eigen::Index>(rng() % 9);
    std::vector<ConvKernel> kernels;
    for (Eigen::Index w : {1, 2, 3, 4}) kernels.push_back({random_matrix(d, w, rng), random_matrix(1, 1, rng)(0, 0)});
    const Matrix e = random_matrix(d, m, rng);
    const auto got = conv_node_vector(e, kernels);
    CHECK(got.size() == 4);
    CHECK((got - naive_conv(e, kernels)).cwiseAbs().maxCoeff() < 1e-10);
  }
  std::vector<ConvKernel> zero_input = {{Matrix::Ones(4, 3), -1.0}};
  CHECK(conv_node_vector(Matrix::Zero(4, 10), zero_input)(0) == 0.0);

  // Short inputs are padded; only the m real positions enter the average.
  std::vector<ConvKernel> wide = {{Matrix::Ones(1, 3), 0.0}};
  Matrix shortm(1, 2);
  shortm << 1.0, 2.0;
  Eigen::VectorXd pad(1);
  pad << 10.0;
  // one window over [1, 2, pad]
  CHECK(conv_node_vector(shortm, wide, pad)(0) == doctest::Approx(13.0));
}

TEST_CASE("tape conv matches the plain conv") {
  const auto cfg = EncoderConfig::toy();
  ParamStore s(4);
  init_encoder_params(s, cfg, 20);
  ad::Tape tape;
  nn::Context ctx{tape, s};
  const std::vector<int> ids = {7, 9, 11, 3};
  const auto v = conv_node_vector(ctx, cfg, ids);
  CHECK(v.cols() == cfg.conv_output_dim());
  Matrix e(cfg.d_token, 4);
  for (int j = 0; j < 4; ++j) e.col(j) = s.value("enc.tok.emb").row(ids[static_cast<std::size_t>(j)]).transpose();
  std::vector<ConvKernel> kernels;
  for (int w : cfg.conv_widths) {
    const Matrix& K = s.value("conv.w" + std::to_string(w) + ".K");
    for (Eigen::Index r = 0; r < K.cols(); ++r) {
      // Column r of K holds offsets stacked as w blocks of d.
      Matrix kw(cfg.d_token, w);
      for (int o = 0; o < w; ++o) kw.col(o) = K.block(o * cfg.d_token, r, cfg.d_token, 1);
      kernels.push_back({kw, s.value("conv.w" + std::to_string(w) + ".b")(0, r)});
    }
  }
  const auto plain = conv_node_vector(e, kernels);
  for (Eigen::Index i = 0; i < plain.size(); ++i) CHECK(std::abs(v.value()(0, i) - plain(i)) < 1e-12);
}

TEST_CASE("transformer matches a naive attention oracle") {
  const auto cfg = EncoderConfig::toy();
  ParamStore s(9);
  init_encoder_params(s, cfg, 30);
  // Move off the tiny-embedding init so attention is not near uniform.
  std::mt19937_64 rng(2);
  s.value("enc.tok.emb") = random_matrix(30, cfg.d_token, rng);
  s.value("enc.pos.emb") = random_matrix(cfg.max_len, cfg.d_hidden, rng, 0.5);
  const std::vector<int> ids = {6, 12, 29, 8, 8, 17};
  ad::Tape tape;
  nn::Context ctx{tape, s};
  const auto out = transformer_encode(ctx, cfg, ids);
  const auto oracle = naive_transformer(s, cfg, ids);
  double worst = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (int k = 0; k < cfg.d_hidden; ++k) {
      worst = std::max(worst, std::abs(out.states.value()(static_cast<Eigen::Index>(i), k) - oracle[i][static_cast<std::size_t>(k)]));
    }
  }
  CHECK(worst < 1e-8);
  REQUIRE(out.attention.size() == 2);
  for (const auto& a : out.attention) CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
  CHECK((out.h_inst.value() - out.states.value().colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("padding is masked out of h_inst") {
  const auto cfg = EncoderConfig::toy();
  ParamStore s(9);
  init_encoder_params(s, cfg, 30);
  ad::Tape tape;
  nn::Context ctx{tape, s};
  const auto a = transformer_encode(ctx, cfg, {6, 12, 29, AsmVocabulary::kPad, AsmVocabulary::kPad});
  CHECK(a.attention[0].col(3).isZero());
  CHECK_THROWS_AS(transformer_encode(ctx, cfg, {AsmVocabulary::kPad}), Error);
  CHECK_THROWS_AS(transformer_encode(ctx, cfg, {}), Error);
  auto small = cfg;
  small.max_len = 4;
  ParamStore s2(9);
  init_encoder_params(s2, small, 30);
  ad::Tape t2;
  nn::Context c2{t2, s2};
  CHECK(transformer_encode(c2, small, {7, 7, 7, 7, 7, 7}).truncated == 2);
}

TEST_CASE("k-hop message passing with K=1 equals a 1-hop oracle") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + rng() % 12;
    const auto g = random_graph(n, rng);
    const Eigen::Index d = 3;
    ParamStore s(static_cast<std::uint64_t>(t));
    nn::add_linear(s, "gnn.l0.k1", 2 * d, d);
    nn::add_linear(s, "gnn.l1.k1", 2 * d, d);
    s.value("gnn.l0.k1.b") = random_matrix(1, d, rng);
    const Matrix x = random_matrix(static_cast<Eigen::Index>(n), d, rng);
    ad::Tape tape;
    nn::Context ctx{tape, s};
    const Matrix got = encoder::khop_message_pass(ctx, g, tape.constant(x), 2, 1).value();

    Matrix h = x;
    for (int l = 0; l < 2; ++l) {
      const auto p = "gnn.l" + std::to_string(l) + ".k1";
      Matrix next(h.rows(), d);
      for (std::size_t v = 0; v < n; ++v) {
        Eigen::RowVectorXd msg = Eigen::RowVectorXd::Zero(d);
        const auto& nb = g.neighbors(v);
        for (auto u : nb) msg += h.row(static_cast<Eigen::Index>(u));
        if (!nb.empty()) msg /= static_cast<double>(nb.size());
        Eigen::RowVectorXd in(2 * d);
        in << msg, h.row(static_cast<Eigen::Index>(v));
        next.row(static_cast<Eigen::Index>(v)) = (in * s.value(p + ".W") + s.value(p + ".b")).cwiseMax(0.0);
      }
      h = next;
    }
    CHECK((got - h).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("k-hop message passing by hand on a 4-node path") {
  // 0-1-2-3, d = 2, K = 2, L = 1.
  ingest::FineGrainedCfg g(4);
  g.add_edge(0, 1, ingest::EdgeKind::fallthrough);
  g.add_edge(1, 2, ingest::EdgeKind::fallthrough);
  g.add_edge(2, 3, ingest::EdgeKind::fallthrough);
  ParamStore s;
  nn::add_linear(s, "gnn.l0.k1", 4, 2);
  nn::add_linear(s, "gnn.l0.k2", 4, 2);
  // k1: [m ; h] -> (m0 + h0, m1 - h1);  k2: -> (m0, h1)
  s.value("gnn.l0.k1.W") << 1, 0, 0, 1, 1, 0, 0, -1;
  s.value("gnn.l0.k1.b") << 0, 0;
  s.value("gnn.l0.k2.W") << 1, 0, 0, 0, 0, 0, 0, 1;
  s.value("gnn.l0.k2.b") << 0, 0.5;
  Matrix x(4, 2);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  ad::Tape tape;
  nn::Context ctx{tape, s};
  const Matrix got = khop_message_pass(ctx, g, tape.constant(x), 1, 2).value();
  // N^1: 0:{1} 1:{0,2} 2:{1,3} 3:{2}; N^2: 0:{1,2} 1:{0,2,3} 2:{0,1,3} 3:{1,2}
  // M1 = [(3,4), (3,4), (5,6), (5,6)]; M2 = [(4,5), (13/3,14/3), (11/3,14/3), (4,5)]
  // k1 = relu(M1_0 + h_0, M1_1 - h_1) = [(4,2), (6,0), (10,0), (12,0)]
  // k2 = relu(M2_0, h_1 + 0.5) = [(4,2.5), (13/3,4.5), (11/3,6.5), (4,8.5)]
  Matrix want(4, 2);
  want << 8, 4.5, 6 + 13.0 / 3.0, 4.5, 10 + 11.0 / 3.0, 6.5, 16, 8.5;
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);

  ParamStore zero;
  nn::add_linear(zero, "gnn.l0.k1", 4, 2);
  nn::add_linear(zero, "gnn.l0.k2", 4, 2);
  for (auto& [name, e] : zero.entries()) e.value.setZero();
  ad::Tape t2;
  nn::Context c2{t2, zero};
  CHECK(khop_message_pass(c2, g, t2.constant(x), 1, 2).value().isZero());

  ingest::FineGrainedCfg lone(1);
  ad::Tape t3;
  nn::Context c3{t3, s};
  const Matrix solo = khop_message_pass(c3, lone, t3.constant(x.topRows(1)), 1, 2).value();
  // M = 0: k1 = relu(h0, -h1) = (1, 0); k2 = relu(0, h1 + 0.5) = (0, 2.5)
  CHECK(solo(0, 0) == doctest::Approx(1.0));
  CHECK(solo(0, 1) == doctest::Approx(2.5));
}

TEST_CASE("readout") {
  std::mt19937_64 rng(1);
  ad::Tape t;
  const Matrix one = random_matrix(1, 4, rng);
  CHECK(readout(t.constant(one)).value() == one);
  const Matrix five = random_matrix(5, 4, rng);
  Matrix mean = Matrix::Zero(1, 4);
  for (int r = 0; r < 5; ++r) mean += five.row(r) / 5.0;
  CHECK((readout(t.constant(five)).value() - mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(readout(t.constant(Matrix(0, 4))), Error);
}

TEST_CASE("encode_function") {
  const auto cfg = EncoderConfig::toy();
  synthetic::DatasetOptions sc;
  sc.sources = 20;
  auto records = synthetic::synthetic_dataset(sc);
  for (auto& r : records) r = ingest::normalize_record(r);
  const auto vocab = AsmVocabulary::build(records);
  ParamStore s(3);
  init_encoder_params(s, cfg, vocab.size());
  std::size_t checked = 0;
  for (const auto& rec : records) {
    if (checked == 50) break;
    ++checked;
    ad::Tape tape;
    nn::Context ctx{tape, s};
    const auto enc = encode_function(ctx, cfg, vocab, rec);
    const auto tokens = std::min<std::size_t>(rec.token_count(), static_cast<std::size_t>(cfg.max_len));
    CHECK(enc.emb.rows() == static_cast<Eigen::Index>(1 + tokens));
    CHECK(enc.node_states.rows() == static_cast<Eigen::Index>(rec.instructions.size()));
    CHECK(enc.h_g.cols() == enc.node_states.cols());
    CHECK(enc.emb.value().allFinite());
    auto renamed = rec;
    renamed.name = "something_else";
    renamed.id = "other";
    const auto again = encode_function(ctx, cfg, vocab, renamed);
    CHECK(again.emb.value() == enc.emb.value());
  }
  CHECK(checked == 50);
}

TEST_CASE("alm losses") {
  const auto cfg = EncoderConfig::toy();
  const auto rec = testing::make_record("a", {{"mov", {"eax", "<imm>"}}, {"add", {"ebx", "eax"}}, {"ret", {}}});
  const auto vocab = AsmVocabulary::build({rec});
  ParamStore s(5);
  init_encoder_params(s, cfg, vocab.size());
  init_alm_params(s, cfg, vocab.size());
  // Zero heads: uniform logits and a 0.5 pair probability.
  s.value("alm.infill.W").setZero();
  s.value("alm.cdi.W").setZero();
  ad::Tape tape;
  nn::Context ctx{tape, s};
  const auto infill = pretrain::apply_spans({"mov", "eax", "<imm>", "ret"}, {{1, 2}});
  const auto l = alm_losses(ctx, cfg, vocab, {infill});
  CHECK(l.infill_targets == 3);
  CHECK(l.infill == doctest::Approx(std::log(static_cast<double>(vocab.size()))));
  pretrain::InstructionPairSample p;
  p.tokens_a = {"mov", "eax"};
  p.tokens_b = {"ret"};
  p.label = pretrain::PairLabel::positive;
  const auto pl = alm_losses(ctx, cfg, vocab, {p});
  CHECK(pl.cdi == doctest::Approx(std::log(2.0)));
  const auto both = alm_losses(ctx, cfg, vocab, {infill, p});
  CHECK(both.total.scalar() == doctest::Approx(both.infill + both.cdi));
  CHECK_THROWS_AS(alm_losses(ctx, cfg, vocab, {}), Error);
  const auto [ids, seg] = pair_input(vocab, p);
  CHECK(ids.size() == 6);
  CHECK(seg == std::vector<int>{0, 0, 0, 0, 1, 1});
}
