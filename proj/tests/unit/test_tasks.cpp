#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "epitome/error.hpp"
#include "epitome/tasks.hpp"
#include "support.hpp"

using namespace epitome;
using namespace epitome::tasks;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Matrix affine(const ParamStore& s, const std::string& p, const Matrix& x, bool bias = true) {
  Matrix out = x * s.value(p + ".W");
  if (bias) {
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += s.value(p + ".b").row(0);
  }
  return out;
}

Matrix naive_ln(const ParamStore& s, const std::string& p, const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mu += x(r, c);
    mu /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      out(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * s.value(p + ".gamma")(0, c) + s.value(p + ".beta")(0, c);
  }
  return out;
}

Matrix naive_attention(const ParamStore& s, const std::string& p, const Matrix& x, const Matrix& mem, int heads,
                       bool causal) {
  const Matrix q = affine(s, p + ".q", x);
  const Matrix k = mem * s.value(p + ".k.W");
  const Matrix v = affine(s, p + ".v", mem);
  const Eigen::Index dh = x.cols() / heads;
  Matrix cat = Matrix::Zero(x.rows(), x.cols());
  for (int h = 0; h < heads; ++h) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Eigen::Index keys = causal ? i + 1 : mem.rows();
      std::vector<double> w(static_cast<std::size_t>(keys));
      double mx = -1e300;
      for (Eigen::Index j = 0; j < keys; ++j) {
        double dot = 0.0;
        for (Eigen::Index t = 0; t < dh; ++t) dot += q(i, h * dh + t) * k(j, h * dh + t);
        w[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, w[static_cast<std::size_t>(j)]);
      }
      double z = 0.0;
      for (auto& e : w) z += (e = std::exp(e - mx));
      for (Eigen::Index j = 0; j < keys; ++j) {
        for (Eigen::Index t = 0; t < dh; ++t) cat(i, h * dh + t) += w[static_cast<std::size_t>(j)] / z * v(j, h * dh + t);
      }
    }
  }
  return affine(s, p + ".o", cat);
}

Matrix naive_decoder_logits(const ParamStore& s, const encoder::EncoderConfig& c, const Matrix& emb,
                            const std::vector<int>& prefix) {
  Matrix h(static_cast<Eigen::Index>(prefix.size()), c.d_hidden);
  for (std::size_t i = 0; i < prefix.size(); ++i)
    h.row(static_cast<Eigen::Index>(i)) =
        s.value("dec.label.emb").row(prefix[i]) + s.value("dec.pos.emb").row(static_cast<Eigen::Index>(i));
  h = naive_ln(s, "dec.l0.ln1", h + naive_attention(s, "dec.l0.self", h, h, c.n_heads, true));
  h = naive_ln(s, "dec.l0.ln2", h + naive_attention(s, "dec.l0.cross", h, emb, c.n_heads, false));
  const Matrix ff = affine(s, "dec.l0.ff2", affine(s, "dec.l0.ff1", h).cwiseMax(0.0));
  h = naive_ln(s, "dec.l0.ln3", h + ff);
  return affine(s, "dec.out", h);
}

struct Fixture {
  encoder::EncoderConfig cfg = encoder::EncoderConfig::toy();
  ParamStore store{6};
  Matrix emb;
  explicit Fixture(std::size_t vocab = 10) {
    init_task_params(store, cfg, vocab);
    std::mt19937_64 rng(3);
    store.value("dec.label.emb") = random_matrix(static_cast<Eigen::Index>(vocab), cfg.d_hidden, rng);
    emb = random_matrix(5, cfg.d_hidden, rng);
  }
};

}  // namespace

TEST_CASE("name vocabulary") {
  const auto v = NameVocabulary::build({{"get", "size"}, {"set", "size"}});
  CHECK(v.size() == 7);
  CHECK(v.id("get") == 4);
  CHECK(v.id("size") == 6);
  CHECK(v.count(v.id("size")) == 2);
  CHECK(v.id("nope") == NameVocabulary::kUnk);
  CHECK(v.labels() == std::vector<std::string>{"get", "set", "size"});
  const auto dir = testing::temp_dir("namevocab");
  v.save(dir / "v.tsv");
  const auto back = NameVocabulary::load(dir / "v.tsv");
  CHECK(back.labels() == v.labels());
  CHECK(back.count(6) == 2);
  CHECK_THROWS_AS(NameVocabulary::build({{""}}), Error);
}

TEST_CASE("decoder matches a naive oracle") {
  Fixture f;
  ad::Tape tape;
  nn::Context ctx{tape, f.store};
  const std::vector<int> prefix = {NameVocabulary::kBos, 5, 7, 4};
  const Matrix got = decoder_logits(ctx, f.cfg, tape.constant(f.emb), prefix).value();
  const Matrix want = naive_decoder_logits(f.store, f.cfg, f.emb, prefix);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-8);
  const auto p = decode_step_probs(ctx, f.cfg, tape.constant(f.emb), prefix);
  CHECK(std::abs(p.sum() - 1.0) < 1e-9);
  CHECK_THROWS_AS(decode_step_probs(ctx, f.cfg, tape.constant(f.emb), {5}), Error);
  CHECK_THROWS_AS(decode_step_probs(ctx, f.cfg, ad::Var(), {NameVocabulary::kBos}), Error);
}

TEST_CASE("uniform decoder") {
  Fixture f;
  f.store.value("dec.out.W").setZero();
  f.store.value("dec.out.b").setZero();
  ad::Tape tape;
  nn::Context ctx{tape, f.store};
  const auto emb = tape.constant(f.emb);
  const auto p = decode_step_probs(ctx, f.cfg, emb, {NameVocabulary::kBos, 6});
  CHECK((p.array() - 0.1).abs().maxCoeff() < 1e-12);
  // two target positions (one label, then EOS)
  CHECK(name_loss(ctx, f.cfg, emb, {5}).scalar() == doctest::Approx(2.0 * std::log(10.0)));
  CHECK(name_loss(ctx, f.cfg, emb, {5, 6}).scalar() == doctest::Approx(3.0 * std::log(10.0)));
  CHECK(name_loss(ctx, f.cfg, emb, {5, NameVocabulary::kPad}).scalar() == doctest::Approx(2.0 * std::log(10.0)));
  CHECK_THROWS_AS(name_loss(ctx, f.cfg, emb, {}), Error);
  CHECK_THROWS_AS(name_loss(ctx, f.cfg, emb, {42}), Error);
}

TEST_CASE("name loss vanishes for a certain model") {
  Fixture f;
  // Logits depend only on dec.out.b, which puts all mass on EOS.
  f.store.value("dec.out.W").setZero();
  f.store.value("dec.out.b").setConstant(-1000.0);
  f.store.value("dec.out.b")(0, NameVocabulary::kEos) = 1000.0;
  ad::Tape tape;
  nn::Context ctx{tape, f.store};
  const auto emb = tape.constant(f.emb);
  CHECK(name_loss(ctx, f.cfg, emb, {NameVocabulary::kPad}).scalar() == doctest::Approx(0.0));
  const auto vocab = NameVocabulary::build({{"a", "b", "c", "d", "e", "f"}});
  CHECK(predict_name(ctx, f.cfg, emb, vocab, 8).empty());
}

TEST_CASE("predict_name respects max_len and ties") {
  Fixture f;
  f.store.value("dec.out.W").setZero();
  f.store.value("dec.out.b").setZero();
  ad::Tape tape;
  nn::Context ctx{tape, f.store};
  const auto vocab = NameVocabulary::build({{"a", "b", "c", "d", "e", "f"}});
  // Uniform: EOS (id 2) is the lowest eligible id and wins the tie.
  CHECK(predict_name(ctx, f.cfg, tape.constant(f.emb), vocab, 8).empty());
  f.store.value("dec.out.b")(0, 7) = 5.0;
  ad::Tape fresh;  // tapes snapshot parameters on first use
  const auto out = predict_name(nn::Context{fresh, f.store}, f.cfg, fresh.constant(f.emb), vocab, 3);
  CHECK(out == std::vector<std::string>{"d", "d", "d"});
}

TEST_CASE("similarity head") {
  std::mt19937_64 rng(12);
  const Matrix emb = random_matrix(5, 8, rng, 3.0);
  const auto h = similarity_h(emb);
  for (Eigen::Index c = 0; c < 8; ++c) {
    double mx = emb(0, c);
    for (Eigen::Index r = 1; r < 5; ++r) mx = std::max(mx, emb(r, c));
    CHECK(std::abs(h(c) - std::tanh(mx)) < 1e-15);
    CHECK(std::abs(h(c)) < 1.0);
  }
  CHECK(similarity_h(Matrix(emb.topRows(1))) == emb.row(0).array().tanh().matrix());
  CHECK_THROWS_AS(similarity_h(Matrix(0, 8)), Error);

  SimilarityHeadParams id;
  id.w1 = id.w2 = Matrix::Identity(8, 8);
  id.b1 = id.b2 = Eigen::RowVectorXd::Zero(8);
  CHECK(score(h, h, id) == doctest::Approx(1.0));
  CHECK(score(h, -h, id) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(score(Eigen::RowVectorXd::Zero(8), h, id), Error);

  SimilarityHeadParams head;
  head.w1 = random_matrix(8, 8, rng);
  head.w2 = random_matrix(8, 8, rng);
  head.b1 = random_matrix(1, 8, rng).row(0);
  head.b2 = random_matrix(1, 8, rng).row(0);
  const Eigen::RowVectorXd h2 = similarity_h(random_matrix(3, 8, rng));
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (int j = 0; j < 8; ++j) {
    double u = head.b1(j);
    double v = head.b2(j);
    for (int i = 0; i < 8; ++i) {
      u += h(i) * head.w1(i, j);
      v += h2(i) * head.w2(i, j);
    }
    dot += u * v;
    nu += u * u;
    nv += v * v;
  }
  CHECK(std::abs(score(h, h2, head) - dot / std::sqrt(nu * nv)) < 1e-12);

  // Scaling the projected vectors leaves the cosine unchanged.
  auto scaled = head;
  scaled.w1 *= 3.0;
  scaled.b1 *= 3.0;
  scaled.w2 *= 0.25;
  scaled.b2 *= 0.25;
  CHECK(std::abs(score(h, h2, scaled) - score(h, h2, head)) < 1e-12);

  ParamStore s(1);
  init_task_params(s, encoder::EncoderConfig::toy(), 10);
  ad::Tape tape;
  nn::Context ctx{tape, s};
  const Matrix e1 = random_matrix(4, 16, rng);
  const Matrix e2 = random_matrix(6, 16, rng);
  const double tape_score = score(ctx, similarity_h(tape.constant(e1)), similarity_h(tape.constant(e2))).scalar();
  CHECK(std::abs(tape_score - score(similarity_h(e1), similarity_h(e2), SimilarityHeadParams::from_store(s))) < 1e-12);
}

TEST_CASE("ranking and joint losses") {
  CHECK(ranking_loss(0.9, 0.2, 0.5) == 0.0);
  CHECK(ranking_loss(0.3, 0.2, 0.5) == doctest::Approx(0.4));
  CHECK(ranking_loss(0.1, 0.1, 0.5) == 0.5);
  CHECK(ranking_loss(0.9, 0.2, 0.5, true) == doctest::Approx(0.2));
  CHECK_THROWS_AS(ranking_loss(0.1, 0.1, 0.0), Error);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const double a = u(rng);
    const double b = u(rng);
    const double d = std::abs(u(rng));
    CHECK(ranking_loss(a + d, b, 0.5) <= ranking_loss(a, b, 0.5));
    CHECK(ranking_loss(a, b + d, 0.5) >= ranking_loss(a, b, 0.5));
    CHECK(ranking_loss(a, b, 0.5) >= 0.0);
  }
  CHECK(joint_loss(2.0, 0.5, 1.0, 1.0) == 2.5);
  CHECK(joint_loss(2.0, 0.5, 0.7, 0.0) == doctest::Approx(1.4));
  CHECK(joint_loss(2.0, 0.5, 3.0, 3.0) == doctest::Approx(3.0 * joint_loss(2.0, 0.5, 1.0, 1.0)));
  CHECK_THROWS_AS(joint_loss(1.0, 1.0, -1.0, 1.0), Error);

  ad::Tape t;
  const auto fp = t.leaf(Matrix::Constant(1, 1, 0.3));
  const auto fn = t.leaf(Matrix::Constant(1, 1, 0.2));
  CHECK(ranking_loss(fp, fn, 0.5).scalar() == doctest::Approx(0.4));
}

TEST_CASE("joint gradient is the weighted sum of task gradients") {
  Fixture f;
  auto grads = [&](double l1, double l2, bool cg, bool cs) {
    ParamStore s = f.store;
    s.zero_grad();
    ad::Tape tape;
    nn::Context ctx{tape, s};
    const auto emb = tape.leaf(f.emb);
    const auto jcg = name_loss(ctx, f.cfg, emb, {5, 6});
    const auto h = similarity_h(emb);
    const auto jcs = ranking_loss(score(ctx, h, h), score(ctx, h, ad::scale(h, -1.0)), 2.5);
    ad::Var loss;
    if (cg && cs) loss = joint_loss(jcg, jcs, l1, l2);
    else loss = cg ? ad::scale(jcg, l1) : ad::scale(jcs, l2);
    tape.backward(loss);
    tape.accumulate_into(s);
    return s;
  };
  const auto joint = grads(0.7, 1.3, true, true);
  const auto only_cg = grads(0.7, 1.3, true, false);
  const auto only_cs = grads(0.7, 1.3, false, true);
  double worst = 0.0;
  for (const auto& name : joint.names()) {
    worst = std::max(worst, (joint.grad(name) - only_cg.grad(name) - only_cs.grad(name)).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-12);
  CHECK(only_cs.grad_norm("sim.") > 0.0);
}

TEST_CASE("triplet sampling") {
  using ingest::OptLevel;
  std::vector<ingest::FunctionRecord> recs = {testing::make_record("A0", {{"nop", {}}}, {}, "a", "A", OptLevel::O0),
                                              testing::make_record("A2", {{"nop", {}}}, {}, "a", "A", OptLevel::O2),
                                              testing::make_record("B0", {{"nop", {}}}, {}, "b", "B", OptLevel::O0)};
  const std::vector<std::vector<std::string>> labels = {{"a"}, {"a"}, {"b"}};
  TripletSampler sampler(recs, labels);
  CHECK(sampler.eligible_anchors() == 2);
  std::set<std::string> anchors;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = sample_triplet(recs, labels, seed);
    anchors.insert(t.anchor_id);
    if (t.anchor_id == "A0") CHECK(t.positive_id == "A2");
    if (t.anchor_id == "A2") CHECK(t.positive_id == "A0");
    CHECK(t.negative_id == "B0");
    CHECK(sample_triplet(recs, labels, seed) == t);
  }
  CHECK(anchors == std::set<std::string>{"A0", "A2"});
  recs[1].opt = OptLevel::O0;
  CHECK_THROWS_AS(TripletSampler(recs, labels), Error);
}
