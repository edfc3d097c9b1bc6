#include "epitome/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::tasks {

// ---- vocabulary ----------------------------------------------------------------

NameVocabulary::NameVocabulary() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) push(s, 0);
}

void NameVocabulary::push(const std::string& label, std::size_t count) {
  if (!ids_.emplace(label, static_cast<int>(labels_.size())).second) throw Error("duplicate label '" + label + "'");
  labels_.push_back(label);
  counts_.push_back(count);
}

NameVocabulary NameVocabulary::build(const std::vector<std::vector<std::string>>& label_sequences) {
  std::map<std::string, std::size_t> counts;
  for (const auto& seq : label_sequences) {
    for (const auto& l : seq) {
      if (l.empty()) throw Error("empty name label");
      ++counts[l];
    }
  }
  NameVocabulary v;
  for (const auto& [label, n] : counts) {
    if (v.ids_.count(label) != 0u) throw Error("label '" + label + "' collides with a special token");
    v.push(label, n);
  }
  return v;
}

int NameVocabulary::id(const std::string& label) const {
  auto it = ids_.find(label);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> NameVocabulary::encode(const std::vector<std::string>& labels) const {
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(id(l));
  return out;
}

std::vector<std::string> NameVocabulary::labels() const {
  return {labels_.begin() + kSpecials, labels_.end()};
}

void NameVocabulary::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (std::size_t i = 0; i < labels_.size(); ++i) out << labels_[i] << '\t' << i << '\t' << counts_[i] << '\n';
  util::write_file(path, out.str());
}

NameVocabulary NameVocabulary::load(const std::filesystem::path& path) {
  NameVocabulary v;
  v.labels_.clear();
  v.counts_.clear();
  v.ids_.clear();
  std::size_t line_no = 0;
  for (const auto& line : util::read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = util::split(line, '\t');
    if (f.size() != 3 || std::stoul(f[1]) != v.labels_.size())
      throw Error(path.string() + ": line " + std::to_string(line_no) + ": expected label<TAB>dense id<TAB>count");
    v.push(f[0], std::stoul(f[2]));
  }
  if (v.labels_.size() < static_cast<std::size_t>(kSpecials) || v.labels_[kEos] != "<eos>")
    throw Error(path.string() + ": missing special labels");
  return v;
}

// ---- parameters --------------------------------------------------------------------

void init_task_params(ParamStore& store, const encoder::EncoderConfig& config, std::size_t name_vocab_size) {
  const Eigen::Index dh = config.d_hidden;
  const auto v = static_cast<Eigen::Index>(name_vocab_size);
  store.add("dec.label.emb", v, dh, Init::normal_embedding);
  store.add("dec.pos.emb", config.max_name_len + 1, dh, Init::normal_embedding);
  for (int l = 0; l < config.decoder_layers; ++l) {
    const auto p = "dec.l" + std::to_string(l);
    nn::add_attention(store, p + ".self", dh);
    nn::add_layer_norm(store, p + ".ln1", dh);
    nn::add_attention(store, p + ".cross", dh);
    nn::add_layer_norm(store, p + ".ln2", dh);
    nn::add_linear(store, p + ".ff1", dh, 2 * dh);
    nn::add_linear(store, p + ".ff2", 2 * dh, dh);
    nn::add_layer_norm(store, p + ".ln3", dh);
  }
  nn::add_linear(store, "dec.out", dh, v);
  nn::add_linear(store, "sim.h1", dh, dh);
  nn::add_linear(store, "sim.h2", dh, dh);
}

// ---- decoder ------------------------------------------------------------------------

ad::Var decoder_logits(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                       const std::vector<int>& prefix) {
  if (!emb.valid() || emb.rows() == 0) throw Error("decoder needs a non-empty encoding");
  if (prefix.empty() || prefix.front() != NameVocabulary::kBos) throw Error("decoder prefix must start with BOS");
  if (prefix.size() > static_cast<std::size_t>(config.max_name_len) + 1) throw Error("decoder prefix exceeds max_name_len");
  const auto n = static_cast<Eigen::Index>(prefix.size());
  std::vector<int> positions(prefix.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  ad::Var h = ad::add(ad::gather_rows(ctx.p("dec.label.emb"), prefix), ad::gather_rows(ctx.p("dec.pos.emb"), positions));
  h = ctx.drop(h);
  const Matrix causal = nn::causal_mask(n);
  for (int l = 0; l < config.decoder_layers; ++l) {
    const auto p = "dec.l" + std::to_string(l);
    h = nn::layer_norm(ctx, p + ".ln1",
                       ad::add(h, ctx.drop(nn::multi_head_attention(ctx, p + ".self", h, h, config.n_heads, &causal))));
    h = nn::layer_norm(ctx, p + ".ln2",
                       ad::add(h, ctx.drop(nn::multi_head_attention(ctx, p + ".cross", h, emb, config.n_heads, nullptr))));
    h = nn::layer_norm(ctx, p + ".ln3", ad::add(h, ctx.drop(nn::feed_forward(ctx, p, h))));
  }
  return nn::linear(ctx, "dec.out", h);
}

Eigen::VectorXd decode_step_probs(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                                  const std::vector<int>& prefix) {
  const ad::Var logits = decoder_logits(ctx, config, emb, prefix);
  const Eigen::RowVectorXd last = logits.value().row(logits.rows() - 1);
  const Eigen::RowVectorXd e = (last.array() - last.maxCoeff()).exp().matrix();
  return (e / e.sum()).transpose();
}

ad::Var name_loss(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                  const std::vector<int>& labels) {
  if (labels.empty()) throw Error("name_loss needs at least one label");
  const std::size_t keep = std::min(labels.size(), static_cast<std::size_t>(config.max_name_len));
  std::vector<int> prefix{NameVocabulary::kBos};
  std::vector<int> targets;
  const auto vocab_size = ctx.params.value("dec.out.b").cols();
  for (std::size_t i = 0; i < keep; ++i) {
    if (labels[i] < 0 || labels[i] >= vocab_size) throw Error("label id outside the vocabulary");
    prefix.push_back(labels[i]);
    targets.push_back(labels[i] == NameVocabulary::kPad ? -1 : labels[i]);
  }
  targets.push_back(NameVocabulary::kEos);
  return ad::cross_entropy(decoder_logits(ctx, config, emb, prefix), targets);
}

std::vector<std::string> predict_name(const nn::Context& ctx, const encoder::EncoderConfig& config, const ad::Var& emb,
                                      const NameVocabulary& vocab, std::size_t max_len) {
  std::vector<std::string> out;
  std::vector<int> prefix{NameVocabulary::kBos};
  const std::size_t cap = std::min(max_len, static_cast<std::size_t>(config.max_name_len));
  while (out.size() < cap) {
    Eigen::VectorXd p = decode_step_probs(ctx, config, emb, prefix);
    p(NameVocabulary::kPad) = -1.0;
    p(NameVocabulary::kBos) = -1.0;
    p(NameVocabulary::kUnk) = -1.0;
    Eigen::Index best = 0;
    p.maxCoeff(&best);  // first maximum on ties
    if (best == NameVocabulary::kEos) break;
    out.push_back(vocab.label(static_cast<int>(best)));
    prefix.push_back(static_cast<int>(best));
  }
  return out;
}

// ---- similarity -------------------------------------------------------------------------

SimilarityHeadParams SimilarityHeadParams::from_store(const ParamStore& store, double margin) {
  SimilarityHeadParams h;
  h.w1 = store.value("sim.h1.W");
  h.b1 = store.value("sim.h1.b").row(0);
  h.w2 = store.value("sim.h2.W");
  h.b2 = store.value("sim.h2.b").row(0);
  h.margin = margin;
  return h;
}

ad::Var similarity_h(const ad::Var& emb) {
  if (!emb.valid() || emb.rows() == 0) throw Error("similarity_h of an empty sequence");
  return ad::tanh(ad::max_rows(emb));
}

Eigen::RowVectorXd similarity_h(const Matrix& emb) {
  if (emb.rows() == 0) throw Error("similarity_h of an empty sequence");
  return emb.colwise().maxCoeff().array().tanh().matrix();
}

ad::Var score(const nn::Context& ctx, const ad::Var& h1, const ad::Var& h2) {
  return ad::cosine(nn::linear(ctx, "sim.h1", h1), nn::linear(ctx, "sim.h2", h2));
}

double score(const Eigen::RowVectorXd& h1, const Eigen::RowVectorXd& h2, const SimilarityHeadParams& head) {
  if (h1.size() != head.w1.rows() || h2.size() != head.w2.rows()) throw Error("score: dimension mismatch");
  const Eigen::RowVectorXd u = h1 * head.w1 + head.b1;
  const Eigen::RowVectorXd v = h2 * head.w2 + head.b2;
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu < 1e-12 || nv < 1e-12) throw Error("degenerate projection");
  return u.dot(v) / (nu * nv);
}

double ranking_loss(double f_pos, double f_neg, double margin, bool paper_literal) {
  if (!(margin > 0.0)) throw Error("margin must be positive");
  return paper_literal ? std::max(f_pos - f_neg - margin, 0.0) : std::max(margin - (f_pos - f_neg), 0.0);
}

ad::Var ranking_loss(const ad::Var& f_pos, const ad::Var& f_neg, double margin, bool paper_literal) {
  if (!(margin > 0.0)) throw Error("margin must be positive");
  ad::Tape& t = *f_pos.tape();
  const ad::Var m = t.constant(Matrix::Constant(1, 1, margin));
  const ad::Var gap = ad::sub(f_pos, f_neg);
  return ad::relu(paper_literal ? ad::sub(gap, m) : ad::sub(m, gap));
}

double joint_loss(double j_cg, double j_cs, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("loss weights must be non-negative");
  return lambda1 * j_cg + lambda2 * j_cs;
}

ad::Var joint_loss(const ad::Var& j_cg, const ad::Var& j_cs, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("loss weights must be non-negative");
  if (!j_cs.valid()) return ad::scale(j_cg, lambda1);
  return ad::add(ad::scale(j_cg, lambda1), ad::scale(j_cs, lambda2));
}

// ---- triplets ---------------------------------------------------------------------------------

TripletSampler::TripletSampler(const std::vector<ingest::FunctionRecord>& records,
                               const std::vector<std::vector<std::string>>& labels)
    : records_(&records), labels_(&labels) {
  if (labels.size() != records.size()) throw Error("one label sequence per record is required");
  std::map<std::string, std::vector<std::size_t>> by_source;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_source[records[i].source_id].push_back(i);
    by_name_[labels[i]].push_back(i);
  }
  positives_.resize(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j : by_source[records[i].source_id]) {
      if (records[j].opt != records[i].opt) positives_[i].push_back(j);
    }
    const bool has_negative = by_name_[labels[i]].size() < records.size();
    if (!positives_[i].empty() && has_negative) anchors_.push_back(i);
  }
  if (anchors_.empty()) throw Error("no record has a same-source positive with a different optimization level");
}

TrainTriplet TripletSampler::sample(std::mt19937_64& rng) const {
  const auto& recs = *records_;
  const auto& labels = *labels_;
  const std::size_t a = anchors_[std::uniform_int_distribution<std::size_t>(0, anchors_.size() - 1)(rng)];
  const auto& pos = positives_[a];
  const std::size_t p = pos[std::uniform_int_distribution<std::size_t>(0, pos.size() - 1)(rng)];
  std::uniform_int_distribution<std::size_t> any(0, recs.size() - 1);
  std::size_t n = any(rng);
  while (labels[n] == labels[a]) n = any(rng);
  return {recs[a].id, recs[p].id, recs[n].id};
}

TrainTriplet sample_triplet(const std::vector<ingest::FunctionRecord>& records,
                            const std::vector<std::vector<std::string>>& labels, std::uint64_t rng_seed) {
  TripletSampler sampler(records, labels);
  std::mt19937_64 rng(rng_seed);
  return sampler.sample(rng);
}

}  // namespace epitome::tasks
