#include "epitome/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::encoder {

namespace {

std::string layer_name(const std::string& prefix, int l) { return prefix + ".l" + std::to_string(l); }

std::string gnn_name(const std::string& prefix, int l, int k) {
  return prefix + ".l" + std::to_string(l) + ".k" + std::to_string(k);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw Error("");
    return out;
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

}  // namespace

// ---- config ----------------------------------------------------------------------

EncoderConfig EncoderConfig::toy() {
  EncoderConfig c;
  c.d_token = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_hidden = 16;
  c.gnn_layers = 1;
  c.gnn_hops = 2;
  c.conv_widths = {2, 3};
  c.kernels_per_width = 2;
  c.max_len = 128;
  c.decoder_layers = 1;
  c.max_name_len = 8;
  return c;
}

void EncoderConfig::validate() const {
  if (d_token < 1 || d_hidden < 1) throw Error("embedding widths must be positive");
  if (n_layers < 0) throw Error("n_layers must be >= 0");
  if (n_heads < 1 || d_hidden % n_heads != 0) throw Error("d_hidden must be divisible by n_heads");
  if (gnn_layers < 1 || gnn_hops < 1) throw Error("gnn_layers and gnn_hops must be >= 1");
  if (conv_widths.empty() || kernels_per_width < 1) throw Error("at least one conv kernel is required");
  for (int w : conv_widths) {
    if (w < 1) throw Error("conv widths must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  if (max_len < 1 || max_name_len < 1 || decoder_layers < 1) throw Error("length caps and decoder depth must be >= 1");
}

int EncoderConfig::max_conv_width() const { return *std::max_element(conv_widths.begin(), conv_widths.end()); }

std::string EncoderConfig::to_text() const {
  std::ostringstream out;
  std::vector<std::string> widths;
  for (int w : conv_widths) widths.push_back(std::to_string(w));
  out << "d_token=" << d_token << '\n'
      << "n_layers=" << n_layers << '\n'
      << "n_heads=" << n_heads << '\n'
      << "d_hidden=" << d_hidden << '\n'
      << "gnn_layers=" << gnn_layers << '\n'
      << "gnn_hops=" << gnn_hops << '\n'
      << "conv_widths=" << util::join(widths, ",") << '\n'
      << "kernels_per_width=" << kernels_per_width << '\n'
      << "dropout=" << util::format_double(dropout) << '\n'
      << "max_len=" << max_len << '\n'
      << "decoder_layers=" << decoder_layers << '\n'
      << "max_name_len=" << max_name_len << '\n';
  return out.str();
}

bool EncoderConfig::apply(const std::string& key, const std::string& value) {
  if (key == "d_token") d_token = parse_int(key, value);
  else if (key == "n_layers") n_layers = parse_int(key, value);
  else if (key == "n_heads") n_heads = parse_int(key, value);
  else if (key == "d_hidden") d_hidden = parse_int(key, value);
  else if (key == "gnn_layers") gnn_layers = parse_int(key, value);
  else if (key == "gnn_hops") gnn_hops = parse_int(key, value);
  else if (key == "kernels_per_width") kernels_per_width = parse_int(key, value);
  else if (key == "max_len") max_len = parse_int(key, value);
  else if (key == "decoder_layers") decoder_layers = parse_int(key, value);
  else if (key == "max_name_len") max_name_len = parse_int(key, value);
  else if (key == "dropout") dropout = std::stod(value);
  else if (key == "conv_widths") {
    conv_widths.clear();
    for (const auto& w : util::split(value, ',')) conv_widths.push_back(parse_int(key, std::string(util::trim(w))));
  } else {
    return false;
  }
  return true;
}

EncoderConfig EncoderConfig::from_text(const std::string& text) {
  EncoderConfig c;
  for (const auto& [key, value] : util::parse_key_values(text)) {
    if (!c.apply(key, value)) throw Error("unknown encoder config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---- vocabulary ------------------------------------------------------------------------

AsmVocabulary::AsmVocabulary() {
  for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", pretrain::kMaskToken, "[EOS_SPAN]"}) push(s);
}

void AsmVocabulary::push(const std::string& token) {
  if (!ids_.emplace(token, static_cast<int>(tokens_.size())).second) throw Error("duplicate vocabulary token '" + token + "'");
  tokens_.push_back(token);
}

AsmVocabulary AsmVocabulary::build(const std::vector<ingest::FunctionRecord>& records, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& rec : records) {
    for (const auto& inst : rec.instructions) {
      for (const auto& tok : inst.tokens()) ++counts[tok];
    }
  }
  AsmVocabulary v;
  for (const auto& [tok, n] : counts) {
    if (n >= min_count && v.ids_.count(tok) == 0u) v.push(tok);
  }
  return v;
}

int AsmVocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> AsmVocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

void AsmVocabulary::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  util::write_file(path, out.str());
}

AsmVocabulary AsmVocabulary::load(const std::filesystem::path& path) {
  AsmVocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  std::size_t line_no = 0;
  for (const auto& line : util::read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = util::split(line, '\t');
    if (f.size() != 2 || std::stoul(f[1]) != v.tokens_.size())
      throw Error(path.string() + ": line " + std::to_string(line_no) + ": expected token<TAB>dense id");
    v.push(f[0]);
  }
  if (v.tokens_.size() < 6 || v.tokens_[kMask] != pretrain::kMaskToken) throw Error(path.string() + ": missing special tokens");
  return v;
}

// ---- parameters ---------------------------------------------------------------------------

void init_encoder_params(ParamStore& store, const EncoderConfig& config, std::size_t asm_vocab_size) {
  config.validate();
  const Eigen::Index dt = config.d_token;
  const Eigen::Index dh = config.d_hidden;
  store.add("enc.tok.emb", static_cast<Eigen::Index>(asm_vocab_size), dt, Init::normal_embedding);
  store.add("enc.pos.emb", config.max_len, dh, Init::normal_embedding);
  store.add("enc.seg.emb", 2, dh, Init::normal_embedding);
  nn::add_linear(store, "enc.in", dt, dh);
  for (int l = 0; l < config.n_layers; ++l) {
    const auto p = layer_name("enc", l);
    nn::add_attention(store, p + ".attn", dh);
    nn::add_layer_norm(store, p + ".ln1", dh);
    nn::add_linear(store, p + ".ff1", dh, 2 * dh);
    nn::add_linear(store, p + ".ff2", 2 * dh, dh);
    nn::add_layer_norm(store, p + ".ln2", dh);
  }
  store.add("conv.pad", 1, dt, Init::normal_embedding);
  for (int w : config.conv_widths) {
    const auto p = "conv.w" + std::to_string(w);
    store.add(p + ".K", w * dt, config.kernels_per_width, Init::uniform_fan_in);
    store.add(p + ".b", 1, config.kernels_per_width, Init::zeros);
  }
  Eigen::Index in = config.conv_output_dim();
  for (int l = 0; l < config.gnn_layers; ++l) {
    for (int k = 1; k <= config.gnn_hops; ++k) nn::add_linear(store, gnn_name("gnn", l, k), 2 * in, dh);
    in = dh;
  }
}

void init_alm_params(ParamStore& store, const EncoderConfig& config, std::size_t asm_vocab_size) {
  const Eigen::Index dh = config.d_hidden;
  store.add("alm.span.emb", kMaxSpanOffset, dh, Init::normal_embedding);
  nn::add_linear(store, "alm.infill", dh, static_cast<Eigen::Index>(asm_vocab_size));
  nn::add_linear(store, "alm.cdi", dh, 1);
  nn::add_linear(store, "alm.dui", dh, 1);
}

// ---- conv --------------------------------------------------------------------------------------

Eigen::VectorXd conv_node_vector(const Matrix& e, const std::vector<ConvKernel>& kernels,
                                 const Eigen::VectorXd& pad_column) {
  if (kernels.empty()) throw Error("conv_node_vector needs at least one kernel");
  const Eigen::Index d = e.rows();
  const Eigen::Index m = e.cols();
  if (m < 1) throw Error("conv_node_vector needs at least one position");
  Eigen::Index w_max = 0;
  for (const auto& k : kernels) {
    if (k.weights.rows() != d || k.weights.cols() < 1) throw Error("kernel height must equal the embedding width");
    w_max = std::max(w_max, k.weights.cols());
  }
  Matrix padded = e;
  if (m < w_max) {
    padded.conservativeResize(d, w_max);
    for (Eigen::Index c = m; c < w_max; ++c) {
      padded.col(c) = pad_column.size() == d ? pad_column : Eigen::VectorXd::Zero(d);
    }
  }
  const Eigen::Index m_pad = padded.cols();
  Eigen::VectorXd out(static_cast<Eigen::Index>(kernels.size()));
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto& k = kernels[i];
    const Eigen::Index w = k.weights.cols();
    const Eigen::Index valid = std::min(m, m_pad - w + 1);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < valid; ++j) {
      const double f = (k.weights.array() * padded.middleCols(j, w).array()).sum() + k.bias;
      acc += std::max(f, 0.0);
    }
    out(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(valid);
  }
  return out;
}

namespace {

// Token-embedding rows for one instruction, padded to the widest kernel.
ad::Var padded_instruction_embedding(const nn::Context& ctx, const EncoderConfig& config, const ad::Var& rows,
                                     Eigen::Index m) {
  const Eigen::Index w_max = config.max_conv_width();
  if (m >= w_max) return rows;
  std::vector<ad::Var> parts{rows};
  const ad::Var pad = ctx.p("conv.pad");
  for (Eigen::Index i = m; i < w_max; ++i) parts.push_back(pad);
  return ad::concat_rows(parts);
}

ad::Var conv_from_rows(const nn::Context& ctx, const EncoderConfig& config, const ad::Var& rows, Eigen::Index m) {
  const ad::Var e = padded_instruction_embedding(ctx, config, rows, m);
  const Eigen::Index m_pad = e.rows();
  std::vector<ad::Var> parts;
  for (int w : config.conv_widths) {
    const auto p = "conv.w" + std::to_string(w);
    const Eigen::Index valid = std::min(m, m_pad - w + 1);
    parts.push_back(ad::conv_mean_pool(e, ad::transpose(ctx.p(p + ".K")), ctx.p(p + ".b"), w, valid));
  }
  return ad::concat_cols(parts);
}

}  // namespace

ad::Var conv_node_vector(const nn::Context& ctx, const EncoderConfig& config, const std::vector<int>& token_ids) {
  if (token_ids.empty()) throw Error("instruction without tokens");
  const ad::Var rows = ad::gather_rows(ctx.p("enc.tok.emb"), token_ids);
  return conv_from_rows(ctx, config, rows, static_cast<Eigen::Index>(token_ids.size()));
}

// ---- transformer ----------------------------------------------------------------------------------

TransformerOutput transformer_encode(const nn::Context& ctx, const EncoderConfig& config, std::vector<int> ids,
                                     std::vector<int> segments) {
  if (ids.empty()) throw Error("transformer_encode: empty token sequence");
  if (!segments.empty() && segments.size() != ids.size()) throw Error("transformer_encode: segment ids misaligned");
  TransformerOutput out;
  const auto cap = static_cast<std::size_t>(config.max_len);
  if (ids.size() > cap) {
    out.truncated = ids.size() - cap;
    ids.resize(cap);
    if (!segments.empty()) segments.resize(cap);
  }
  const auto n = static_cast<Eigen::Index>(ids.size());
  std::vector<bool> valid(ids.size());
  std::size_t valid_count = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    valid[i] = ids[i] != AsmVocabulary::kPad;
    valid_count += valid[i] ? 1 : 0;
  }
  if (valid_count == 0) throw Error("transformer_encode: sequence is all padding");

  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  ad::Var h = nn::linear(ctx, "enc.in", ad::gather_rows(ctx.p("enc.tok.emb"), ids));
  h = ad::add(h, ad::gather_rows(ctx.p("enc.pos.emb"), positions));
  if (!segments.empty()) h = ad::add(h, ad::gather_rows(ctx.p("enc.seg.emb"), segments));
  h = ctx.drop(h);

  const bool any_pad = valid_count != ids.size();
  const Matrix mask = any_pad ? nn::key_padding_mask(n, valid) : Matrix();
  for (int l = 0; l < config.n_layers; ++l) {
    const auto p = layer_name("enc", l);
    const ad::Var attn =
        nn::multi_head_attention(ctx, p + ".attn", h, h, config.n_heads, any_pad ? &mask : nullptr, &out.attention);
    h = nn::layer_norm(ctx, p + ".ln1", ad::add(h, ctx.drop(attn)));
    h = nn::layer_norm(ctx, p + ".ln2", ad::add(h, ctx.drop(nn::feed_forward(ctx, p, h))));
  }
  out.states = h;
  if (any_pad) {
    Matrix weights = Matrix::Zero(1, n);
    for (std::size_t i = 0; i < valid.size(); ++i) {
      if (valid[i]) weights(0, static_cast<Eigen::Index>(i)) = 1.0 / static_cast<double>(valid_count);
    }
    out.h_inst = ad::matmul(ctx.tape.constant(std::move(weights)), h);
  } else {
    out.h_inst = ad::mean_rows(h);
  }
  return out;
}

// ---- graph ---------------------------------------------------------------------------------------------

Matrix khop_mean_matrix(const ingest::FineGrainedCfg& cfg, std::size_t k) {
  const auto n = static_cast<Eigen::Index>(cfg.node_count());
  Matrix a = Matrix::Zero(n, n);
  for (std::size_t v = 0; v < cfg.node_count(); ++v) {
    const auto& nb = cfg.khop(v, k);
    if (nb.empty()) continue;
    const double w = 1.0 / static_cast<double>(nb.size());
    for (std::size_t u : nb) a(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(u)) = w;
  }
  return a;
}

ad::Var khop_message_pass(const nn::Context& ctx, const ingest::FineGrainedCfg& cfg, const ad::Var& x, int layers,
                          int hops, const std::string& prefix) {
  if (static_cast<std::size_t>(x.rows()) != cfg.node_count()) throw Error("node vectors do not match the graph size");
  if (layers < 1 || hops < 1) throw Error("message passing needs L >= 1 and K >= 1");
  std::vector<ad::Var> agg;
  for (int k = 1; k <= hops; ++k) agg.push_back(ctx.tape.constant(khop_mean_matrix(cfg, static_cast<std::size_t>(k))));
  ad::Var h = x;
  for (int l = 0; l < layers; ++l) {
    ad::Var next;
    for (int k = 1; k <= hops; ++k) {
      const ad::Var m = ad::matmul(agg[static_cast<std::size_t>(k - 1)], h);
      const ad::Var hk = ad::relu(nn::linear(ctx, gnn_name(prefix, l, k), ad::concat_cols({m, h})));
      next = next.valid() ? ad::add(next, hk) : hk;
    }
    h = next;
  }
  return h;
}

ad::Var readout(const ad::Var& node_states) {
  if (node_states.rows() == 0) throw Error("readout of an empty graph");
  return ad::mean_rows(node_states);
}

// ---- full encoder -----------------------------------------------------------------------------------------

std::vector<int> function_token_ids(const AsmVocabulary& vocab, const ingest::FunctionRecord& rec, int max_len,
                                    std::size_t* truncated) {
  std::vector<int> ids;
  for (const auto& inst : rec.instructions) {
    for (const auto& tok : inst.tokens()) ids.push_back(vocab.id(tok));
  }
  const auto cap = static_cast<std::size_t>(max_len);
  if (truncated != nullptr) *truncated = ids.size() > cap ? ids.size() - cap : 0;
  if (ids.size() > cap) ids.resize(cap);
  return ids;
}

FunctionEncoding encode_function(const nn::Context& ctx, const EncoderConfig& config, const AsmVocabulary& vocab,
                                 const ingest::FunctionRecord& rec) {
  if (rec.instructions.empty()) throw Error("function '" + rec.id + "' has no instructions");
  FunctionEncoding enc;

  // One gather for every instruction token; each node slices its own rows.
  std::vector<int> all_ids;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> extents;
  for (const auto& inst : rec.instructions) {
    const auto ids = vocab.encode(inst.tokens());
    extents.emplace_back(static_cast<Eigen::Index>(all_ids.size()), static_cast<Eigen::Index>(ids.size()));
    all_ids.insert(all_ids.end(), ids.begin(), ids.end());
  }
  const ad::Var table = ad::gather_rows(ctx.p("enc.tok.emb"), all_ids);
  std::vector<ad::Var> nodes;
  nodes.reserve(extents.size());
  for (const auto& [start, len] : extents) {
    nodes.push_back(conv_from_rows(ctx, config, ad::slice_rows(table, start, len), len));
  }
  const auto cfg = ingest::build_fine_grained_cfg(rec);
  enc.node_states = khop_message_pass(ctx, cfg, ad::concat_rows(nodes), config.gnn_layers, config.gnn_hops);
  enc.h_g = readout(enc.node_states);

  auto seq = transformer_encode(ctx, config, all_ids);
  enc.truncated = seq.truncated;
  enc.token_states = seq.states;
  enc.h_inst = seq.h_inst;
  enc.emb = ad::concat_rows({enc.h_g, enc.token_states});
  return enc;
}

// ---- pretraining ----------------------------------------------------------------------------------------------

std::pair<std::vector<int>, std::vector<int>> pair_input(const AsmVocabulary& vocab,
                                                          const pretrain::InstructionPairSample& s) {
  if (s.tokens_a.empty() || s.tokens_b.empty()) throw Error("pair sample with an empty instruction");
  std::vector<int> ids{AsmVocabulary::kCls};
  std::vector<int> seg{0};
  for (const auto& t : s.tokens_a) {
    ids.push_back(vocab.id(t));
    seg.push_back(0);
  }
  ids.push_back(AsmVocabulary::kSep);
  seg.push_back(0);
  for (const auto& t : s.tokens_b) {
    ids.push_back(vocab.id(t));
    seg.push_back(1);
  }
  ids.push_back(AsmVocabulary::kSep);
  seg.push_back(1);
  return {ids, seg};
}

AlmLoss alm_losses(const nn::Context& ctx, const EncoderConfig& config, const AsmVocabulary& vocab,
                   const std::vector<AlmSample>& batch) {
  AlmLoss out;
  ad::Var infill_sum;
  ad::Var cdi_sum;
  ad::Var dui_sum;
  auto accumulate = [](ad::Var& acc, const ad::Var& v) { acc = acc.valid() ? ad::add(acc, v) : v; };

  for (const auto& sample : batch) {
    if (const auto* inf = std::get_if<pretrain::InfillingSample>(&sample)) {
      const auto ids = vocab.encode(inf->noised);
      std::vector<int> mask_positions;
      for (std::size_t i = 0; i < ids.size() && i < static_cast<std::size_t>(config.max_len); ++i) {
        if (ids[i] == AsmVocabulary::kMask) mask_positions.push_back(static_cast<int>(i));
      }
      std::vector<int> rows;
      std::vector<int> offsets;
      std::vector<int> targets;
      for (const auto& t : inf->targets) {
        if (t.mask_slot >= mask_positions.size()) continue;  // sentinel fell past the length cap
        for (std::size_t o = 0; o <= t.span.size(); ++o) {
          rows.push_back(mask_positions[t.mask_slot]);
          offsets.push_back(static_cast<int>(std::min<std::size_t>(o, kMaxSpanOffset - 1)));
          targets.push_back(o < t.span.size() ? vocab.id(t.span[o]) : AsmVocabulary::kEndSpan);
        }
      }
      if (targets.empty()) continue;
      const auto enc = transformer_encode(ctx, config, ids);
      const ad::Var query = ad::add(ad::gather_rows(enc.states, rows), ad::gather_rows(ctx.p("alm.span.emb"), offsets));
      accumulate(infill_sum, ad::cross_entropy(nn::linear(ctx, "alm.infill", query), targets));
      out.infill_targets += targets.size();
    } else {
      const auto& pair = std::get<pretrain::InstructionPairSample>(sample);
      const auto [ids, seg] = pair_input(vocab, pair);
      const auto enc = transformer_encode(ctx, config, ids, seg);
      const bool cdi = pair.task == pretrain::PairTask::cdi;
      const ad::Var logit = nn::linear(ctx, cdi ? "alm.cdi" : "alm.dui", ad::slice_rows(enc.states, 0, 1));
      const ad::Var loss = ad::bce_with_logits(logit, pair.label == pretrain::PairLabel::positive ? 1.0 : 0.0);
      if (cdi) {
        accumulate(cdi_sum, loss);
        ++out.cdi_samples;
      } else {
        accumulate(dui_sum, loss);
        ++out.dui_samples;
      }
    }
  }
  if (out.infill_targets + out.cdi_samples + out.dui_samples == 0) throw Error("ALM batch has no targets");
  auto mean_of = [](const ad::Var& sum, std::size_t n, double& report) {
    const ad::Var m = ad::scale(sum, 1.0 / static_cast<double>(n));
    report = m.scalar();
    return m;
  };
  if (out.infill_targets > 0) accumulate(out.total, mean_of(infill_sum, out.infill_targets, out.infill));
  if (out.cdi_samples > 0) accumulate(out.total, mean_of(cdi_sum, out.cdi_samples, out.cdi));
  if (out.dui_samples > 0) accumulate(out.total, mean_of(dui_sum, out.dui_samples, out.dui));
  return out;
}

}  // namespace epitome::encoder
