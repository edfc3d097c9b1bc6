#include "epitome/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "epitome/error.hpp"
#include "epitome/metrics.hpp"
#include "epitome/name_tokenizer.hpp"
#include "epitome/pretrain_data.hpp"
#include "epitome/synthetic.hpp"
#include "epitome/util.hpp"

namespace epitome::trainer {

namespace {

std::size_t parse_size(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &pos);
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected an integer, got '" + value + "'");
  }
  if (pos != value.size() || v < 0) throw Error("config key '" + key + "': expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw Error("config key '" + key + "': expected a number, got '" + value + "'");
  }
  if (pos != value.size()) throw Error("config key '" + key + "': expected a number, got '" + value + "'");
  return v;
}

bool parse_flag(const std::string& key, const std::string& value) {
  const auto v = util::to_lower(value);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw Error("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// First k entries of a seeded shuffle of [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

std::vector<std::string> flat_tokens(const ingest::FunctionRecord& rec) {
  std::vector<std::string> out;
  for (const auto& inst : rec.instructions) {
    const auto t = inst.tokens();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

nn::Context eval_context(ad::Tape& tape, const ParamStore& params) { return nn::Context{tape, params}; }

}  // namespace

// ---- config ----------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw Error("lr must be positive");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (patience < 1) throw Error("patience must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw Error("adam_eps must be positive");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw Error("loss weights must be non-negative");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw Error("mask_ratio must lie in (0, 1)");
  if (cdi_window < 1) throw Error("cdi_window must be at least 1");
  model.validate();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  const auto pairs = util::parse_key_values(text);
  TrainConfig c;
  for (const auto& [key, value] : pairs) {
    if (key == "toy" && parse_flag(key, value)) {
      c.toy = true;
      c.model = encoder::EncoderConfig::toy();
    }
  }
  for (const auto& [key, value] : pairs) {
    if (key == "toy") continue;
    if (key == "batch_size") c.batch_size = parse_size(key, value);
    else if (key == "lr") c.lr = parse_real(key, value);
    else if (key == "beta1") c.beta1 = parse_real(key, value);
    else if (key == "beta2") c.beta2 = parse_real(key, value);
    else if (key == "adam_eps") c.adam_eps = parse_real(key, value);
    else if (key == "max_steps") c.max_steps = parse_size(key, value);
    else if (key == "pretrain_steps") c.pretrain_steps = parse_size(key, value);
    else if (key == "patience") c.patience = parse_size(key, value);
    else if (key == "seed") c.seed = parse_size(key, value);
    else if (key == "lambda1") c.lambda1 = parse_real(key, value);
    else if (key == "lambda2") c.lambda2 = parse_real(key, value);
    else if (key == "margin") c.margin = parse_real(key, value);
    else if (key == "paper_literal_jcs") c.paper_literal_jcs = parse_flag(key, value);
    else if (key == "eval_every") c.eval_every = parse_size(key, value);
    else if (key == "max_valid") c.max_valid = parse_size(key, value);
    else if (key == "cdi_window") c.cdi_window = parse_size(key, value);
    else if (key == "negatives_per_positive") c.negatives_per_positive = parse_size(key, value);
    else if (key == "mask_ratio") c.mask_ratio = parse_real(key, value);
    else if (!c.model.apply(key, value)) throw Error("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  try {
    return from_text(util::read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

std::string TrainConfig::to_text() const {
  std::string s;
  auto put = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  put("toy", toy ? "1" : "0");
  put("batch_size", std::to_string(batch_size));
  put("lr", util::format_double(lr));
  put("beta1", util::format_double(beta1));
  put("beta2", util::format_double(beta2));
  put("adam_eps", util::format_double(adam_eps));
  put("max_steps", std::to_string(max_steps));
  put("pretrain_steps", std::to_string(pretrain_steps));
  put("patience", std::to_string(patience));
  put("seed", std::to_string(seed));
  put("lambda1", util::format_double(lambda1));
  put("lambda2", util::format_double(lambda2));
  put("margin", util::format_double(margin));
  put("paper_literal_jcs", paper_literal_jcs ? "1" : "0");
  put("eval_every", std::to_string(eval_every));
  put("max_valid", std::to_string(max_valid));
  put("cdi_window", std::to_string(cdi_window));
  put("negatives_per_positive", std::to_string(negatives_per_positive));
  put("mask_ratio", util::format_double(mask_ratio));
  return s + model.to_text();
}

std::uint64_t step_seed(std::uint64_t seed, std::size_t step) {
  return splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(step));
}

// ---- optimizer ---------------------------------------------------------------------------

void adam_step(ParamStore& params, const TrainConfig& config, std::size_t step) {
  if (step < 1) throw Error("Adam step counts from 1");
  for (const auto& [name, e] : params.entries()) {
    if (!e.grad.allFinite()) throw Error("non-finite gradient in parameter '" + name + "'");
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (auto& [name, e] : params.entries()) {
    if (e.adam_m.size() == 0) {
      e.adam_m = Matrix::Zero(e.value.rows(), e.value.cols());
      e.adam_v = Matrix::Zero(e.value.rows(), e.value.cols());
    }
    e.adam_m = config.beta1 * e.adam_m + (1.0 - config.beta1) * e.grad;
    e.adam_v = config.beta2 * e.adam_v + (1.0 - config.beta2) * e.grad.cwiseProduct(e.grad);
    e.value.array() -= config.lr * (e.adam_m.array() / c1) / ((e.adam_v.array() / c2).sqrt() + config.adam_eps);
    e.grad.setZero();
  }
}

// ---- gradient check ------------------------------------------------------------------------

GradCheckResult grad_check(const LossFn& loss_fn, ParamStore& params, const GradCheckOptions& options,
                           const std::function<void(ParamStore&)>& analytic_override) {
  auto evaluate = [&](std::uint64_t* signature, std::vector<std::string>* touched, bool backward) {
    ad::Tape tape;
    tape.track_branches(true);
    const ad::Var loss = loss_fn(tape, params);
    const double v = loss.scalar();
    if (!std::isfinite(v)) throw Error("grad_check: loss is not finite");
    if (signature != nullptr) *signature = tape.branch_signature();
    if (touched != nullptr) *touched = tape.param_names();
    if (backward) {
      tape.backward(loss);
      params.zero_grad();
      tape.accumulate_into(params);
    }
    return v;
  };

  GradCheckResult result;
  std::uint64_t base_sig = 0;
  std::vector<std::string> touched;
  result.loss = evaluate(&base_sig, &touched, !analytic_override);
  if (analytic_override) {
    params.zero_grad();
    analytic_override(params);
  }

  std::vector<std::pair<std::string, Eigen::Index>> coords;
  for (const auto& name : touched) {
    for (Eigen::Index i = 0; i < params.value(name).size(); ++i) coords.emplace_back(name, i);
  }
  std::mt19937_64 rng(options.seed);
  const auto chosen = sample_without_replacement(coords.size(), options.max_coords, rng);

  for (const std::size_t c : chosen) {
    const auto& [name, idx] = coords[c];
    double& x = params.value(name).data()[idx];
    const double analytic = params.grad(name).data()[idx];
    const double x0 = x;
    std::uint64_t sig_plus = 0;
    std::uint64_t sig_minus = 0;
    x = x0 + options.eps;
    const double lp = evaluate(&sig_plus, nullptr, false);
    x = x0 - options.eps;
    const double lm = evaluate(&sig_minus, nullptr, false);
    x = x0;
    if (options.skip_kinks && (sig_plus != base_sig || sig_minus != base_sig)) {
      ++result.kinks;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * options.eps);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    ++result.checked;
    if (rel > result.max_rel_error || result.worst_param.empty()) {
      result.max_rel_error = std::max(rel, result.max_rel_error);
      result.worst_param = name;
      result.worst_index = idx;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
  }
  params.zero_grad();
  return result;
}

GradCheckFixture make_gradcheck_fixture(std::uint64_t seed) {
  GradCheckFixture f;
  f.config = encoder::EncoderConfig::toy();

  synthetic::DatasetOptions opts;
  opts.sources = 4;
  opts.variants = {ingest::OptLevel::O0, ingest::OptLevel::O2};
  opts.seed = seed;
  constexpr std::size_t kMaxInstructions = 8;
  for (auto rec : synthetic::synthetic_dataset(opts)) {
    rec = ingest::normalize_record(std::move(rec));
    if (rec.instructions.size() > kMaxInstructions) rec.instructions.resize(kMaxInstructions);
    std::erase_if(rec.edges, [&](const ingest::Edge& e) { return e.src >= kMaxInstructions || e.dst >= kMaxInstructions; });
    if (rec.defuse) {
      std::erase_if(*rec.defuse,
                    [&](const ingest::DefUsePair& p) { return p.first >= kMaxInstructions || p.second >= kMaxInstructions; });
    }
    f.records.push_back(std::move(rec));
  }

  std::vector<std::vector<std::string>> label_words;
  for (const auto& rec : f.records) {
    auto words = tokenizer::split_by_convention(rec.name);
    for (auto& w : words) w = util::to_lower(w);
    label_words.push_back(std::move(words));
  }
  f.names = tasks::NameVocabulary::build(label_words);
  for (const auto& w : label_words) f.labels.push_back(f.names.encode(w));
  f.asm_vocab = encoder::AsmVocabulary::build(f.records);

  const tasks::TripletSampler sampler(f.records, label_words);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < 3; ++i) f.triplets.push_back(sampler.sample(rng));

  for (std::size_t r = 0; r < 2; ++r) {
    const auto& rec = f.records[r];
    const auto rs = pretrain::derive_seed(seed, rec.id);
    f.infill.emplace_back(pretrain::text_infilling(flat_tokens(rec), 0.3, rs));
    for (auto& s : pretrain::cdi_pairs(rec, 2, 1, rs)) {
      if (f.cdi.size() < 3) f.cdi.emplace_back(std::move(s));
    }
    for (auto& s : pretrain::dui_pairs(rec, 1, rs)) {
      if (f.dui.size() < 3) f.dui.emplace_back(std::move(s));
    }
  }

  f.params = ParamStore(seed);
  encoder::init_encoder_params(f.params, f.config, f.asm_vocab.size());
  encoder::init_alm_params(f.params, f.config, f.asm_vocab.size());
  tasks::init_task_params(f.params, f.config, f.names.size());
  // generic point: unit-scale embeddings, jittered weights
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& [name, e] : f.params.entries()) {
    const bool embedding = name.ends_with(".emb") || name == "conv.pad";
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      e.value.data()[i] = embedding ? unit(rng) : e.value.data()[i] + 0.1 * unit(rng);
    }
  }
  return f;
}

namespace {

const ingest::FunctionRecord& record_by_id(const GradCheckFixture& f, const std::string& id) {
  for (const auto& r : f.records) {
    if (r.id == id) return r;
  }
  throw Error("fixture has no record '" + id + "'");
}

ad::Var fixture_jcg(const nn::Context& ctx, const GradCheckFixture& f) {
  ad::Var total;
  constexpr std::size_t kRecords = 2;
  for (std::size_t r = 0; r < kRecords; ++r) {
    const auto enc = encoder::encode_function(ctx, f.config, f.asm_vocab, f.records[r]);
    const auto l = tasks::name_loss(ctx, f.config, enc.emb, f.labels[r]);
    total = total.valid() ? ad::add(total, l) : l;
  }
  return ad::scale(total, 1.0 / static_cast<double>(kRecords));
}

ad::Var fixture_jcs(const nn::Context& ctx, const GradCheckFixture& f, bool literal) {
  ad::Var total;
  auto h = [&](const std::string& id) {
    return tasks::similarity_h(encoder::encode_function(ctx, f.config, f.asm_vocab, record_by_id(f, id)).emb);
  };
  for (const auto& t : f.triplets) {
    const auto ha = h(t.anchor_id);
    const auto pos = tasks::score(ctx, ha, h(t.positive_id));
    const auto neg = tasks::score(ctx, ha, h(t.negative_id));
    const auto l = tasks::ranking_loss(pos, neg, literal ? f.literal_margin : f.margin, literal);
    total = total.valid() ? ad::add(total, l) : l;
  }
  return ad::scale(total, 1.0 / static_cast<double>(f.triplets.size()));
}

}  // namespace

LossFn loss_path(const GradCheckFixture& fixture, const std::string& path) {
  const GradCheckFixture* f = &fixture;
  auto alm = [f](const std::vector<encoder::AlmSample>* batch) {
    return [f, batch](ad::Tape& tape, const ParamStore& params) {
      return encoder::alm_losses(eval_context(tape, params), f->config, f->asm_vocab, *batch).total;
    };
  };
  if (path == "infill") return alm(&f->infill);
  if (path == "cdi") return alm(&f->cdi);
  if (path == "dui") return alm(&f->dui);
  if (path == "jcg") {
    return [f](ad::Tape& tape, const ParamStore& params) { return fixture_jcg(eval_context(tape, params), *f); };
  }
  if (path == "jcs" || path == "jcs-literal") {
    const bool literal = path == "jcs-literal";
    return [f, literal](ad::Tape& tape, const ParamStore& params) {
      return fixture_jcs(eval_context(tape, params), *f, literal);
    };
  }
  if (path == "joint") {
    return [f](ad::Tape& tape, const ParamStore& params) {
      const auto ctx = eval_context(tape, params);
      return tasks::joint_loss(fixture_jcg(ctx, *f), fixture_jcs(ctx, *f, false), 1.0, 1.0);
    };
  }
  throw Error("unknown loss path '" + path + "'");
}

// ---- checkpoints -------------------------------------------------------------------------

void Checkpoint::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  params.save(dir);
  util::write_file(dir / "config.txt", config.to_text());
  asm_vocab.save(dir / "asm_vocab.tsv");
  if (name_vocab) {
    name_vocab->save(dir / "name_vocab.tsv");
  } else {
    std::filesystem::remove(dir / "name_vocab.tsv");
  }
  std::string s;
  s += "phase=" + state.phase + "\n";
  s += "step=" + std::to_string(state.step) + "\n";
  s += "best_metric=" + util::format_double(state.best_metric) + "\n";
  s += "best_step=" + std::to_string(state.best_step) + "\n";
  s += "bad_evals=" + std::to_string(state.bad_evals) + "\n";
  util::write_file(dir / "train_state.txt", s);
}

Checkpoint Checkpoint::load(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("checkpoint directory not found: " + dir.string());
  Checkpoint c;
  c.params = ParamStore::load(dir);
  c.config = TrainConfig::load(dir / "config.txt");
  c.asm_vocab = encoder::AsmVocabulary::load(dir / "asm_vocab.tsv");
  if (std::filesystem::exists(dir / "name_vocab.tsv")) c.name_vocab = tasks::NameVocabulary::load(dir / "name_vocab.tsv");
  for (const auto& [key, value] : util::parse_key_values(util::read_file(dir / "train_state.txt"))) {
    if (key == "phase") c.state.phase = value;
    else if (key == "step") c.state.step = parse_size(key, value);
    else if (key == "best_metric") c.state.best_metric = parse_real(key, value);
    else if (key == "best_step") c.state.best_step = parse_size(key, value);
    else if (key == "bad_evals") c.state.bad_evals = parse_size(key, value);
    else throw Error("train_state.txt: unknown key '" + key + "'");
  }
  return c;
}

// ---- pretraining -----------------------------------------------------------------------------

PretrainData build_pretrain_data(const std::vector<ingest::FunctionRecord>& records, const TrainConfig& config) {
  PretrainData d;
  for (const auto& rec : records) {
    const auto rs = pretrain::derive_seed(config.seed, rec.id);
    const auto tokens = flat_tokens(rec);
    if (!tokens.empty()) {
      d.infill.emplace_back(pretrain::text_infilling(tokens, config.mask_ratio, rs));
      d.infill_ids.push_back(rec.id);
    }
    for (auto& s : pretrain::cdi_pairs(rec, config.cdi_window, config.negatives_per_positive, rs)) {
      d.cdi.emplace_back(std::move(s));
      d.cdi_ids.push_back(rec.id);
    }
    for (auto& s : pretrain::dui_pairs(rec, config.negatives_per_positive, rs)) {
      d.dui.emplace_back(std::move(s));
      d.dui_ids.push_back(rec.id);
    }
  }
  return d;
}

namespace {

struct TaskStream {
  std::string name;
  const std::vector<encoder::AlmSample>* samples;
  const std::vector<std::string>* ids;
};

std::vector<TaskStream> streams_of(const PretrainData& d) {
  return {{"infill", &d.infill, &d.infill_ids}, {"cdi", &d.cdi, &d.cdi_ids}, {"dui", &d.dui, &d.dui_ids}};
}

double pretrain_validation_loss(const ParamStore& params, const PretrainData& valid, const encoder::AsmVocabulary& vocab,
                                const TrainConfig& config) {
  double total = 0.0;
  std::size_t tasks_seen = 0;
  for (const auto& s : streams_of(valid)) {
    const std::size_t n = std::min(s.samples->size(), config.max_valid);
    if (n == 0) continue;
    double sum = 0.0;
    std::size_t chunks = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const std::vector<encoder::AlmSample> batch(s.samples->begin() + static_cast<std::ptrdiff_t>(begin),
                                                  s.samples->begin() + static_cast<std::ptrdiff_t>(end));
      ad::Tape tape;
      try {
        sum += encoder::alm_losses(eval_context(tape, params), config.model, vocab, batch).total.scalar();
        ++chunks;
      } catch (const Error&) {
        // chunk whose targets all fell past the length cap
      }
    }
    if (chunks > 0) {
      total += sum / static_cast<double>(chunks);
      ++tasks_seen;
    }
  }
  if (tasks_seen == 0) return std::numeric_limits<double>::quiet_NaN();
  return total / static_cast<double>(tasks_seen);
}

}  // namespace

PretrainResult pretrain_alm(const PretrainData& train, const PretrainData& valid, const encoder::AsmVocabulary& vocab,
                            const TrainConfig& config, const std::filesystem::path& out_dir, const Checkpoint* resume) {
  config.validate();
  const auto streams = streams_of(train);
  for (const auto& s : streams) {
    if (s.samples->empty()) throw Error("pretraining task stream '" + s.name + "' is empty");
    if (s.ids->size() != s.samples->size()) throw Error("pretraining stream '" + s.name + "' has mismatched ids");
  }

  PretrainResult result;
  Checkpoint& last = result.last;
  last.config = config;
  last.asm_vocab = vocab;
  if (resume != nullptr) {
    if (resume->state.phase != "pretrain") throw Error("resume checkpoint is not a pretraining checkpoint");
    if (resume->asm_vocab.size() != vocab.size()) throw Error("resume checkpoint vocabulary differs");
    last.params = resume->params;
    last.state = resume->state;
  } else {
    last.params = ParamStore(config.seed);
    encoder::init_encoder_params(last.params, config.model, vocab.size());
    encoder::init_alm_params(last.params, config.model, vocab.size());
    last.state.phase = "pretrain";
    last.state.best_metric = std::numeric_limits<double>::infinity();
  }
  result.best = last;

  const bool validate = config.eval_every > 0 && valid.size() > 0;
  for (std::size_t step = last.state.step + 1; step <= config.max_steps; ++step) {
    const auto& stream = streams[(step - 1) % streams.size()];
    std::mt19937_64 rng(step_seed(config.seed, step));
    const auto picks = sample_without_replacement(stream.samples->size(), config.batch_size, rng);
    std::vector<encoder::AlmSample> batch;
    batch.reserve(picks.size());
    for (const auto i : picks) {
      batch.push_back((*stream.samples)[i]);
      result.gradient_record_ids.insert((*stream.ids)[i]);
    }

    ad::Tape tape;
    const nn::Context ctx{tape, last.params, true, config.model.dropout, &rng};
    const auto loss = encoder::alm_losses(ctx, config.model, vocab, batch);
    tape.backward(loss.total);
    tape.accumulate_into(last.params);
    adam_step(last.params, config, step);
    ++result.gradient_steps;
    result.train_log.push_back({step, stream.name, loss.total.scalar()});
    last.state.step = step;

    if (validate && step % config.eval_every == 0) {
      const double v = pretrain_validation_loss(last.params, valid, vocab, config);
      result.valid_log.emplace_back(step, v);
      if (v < last.state.best_metric) {
        last.state.best_metric = v;
        last.state.best_step = step;
        last.state.bad_evals = 0;
        result.best = last;
      } else if (++last.state.bad_evals >= config.patience) {
        break;
      }
    }
  }
  if (!validate) result.best = last;
  if (!out_dir.empty()) {
    result.best.save(out_dir / "best");
    last.save(out_dir / "last");
  }
  return result;
}

// ---- multi-task fine-tuning -------------------------------------------------------------------

Ablation parse_ablation(const std::string& s) {
  if (s == "none") return Ablation::none;
  if (s == "no-pretrain" || s == "no_pretrain") return Ablation::no_pretrain;
  if (s == "no-similarity" || s == "no_similarity") return Ablation::no_similarity;
  throw Error("unknown ablation '" + s + "' (expected none, no-pretrain or no-similarity)");
}

void check_vocabulary_leakage(const tasks::NameVocabulary& vocab, const MultitaskData& data) {
  std::set<std::string> train_labels;
  for (const auto& rec : data.train) {
    const auto it = data.labels.find(rec.id);
    if (it == data.labels.end()) throw Error("no labels for training record '" + rec.id + "'");
    train_labels.insert(it->second.begin(), it->second.end());
  }
  for (const auto& label : vocab.labels()) {
    if (train_labels.count(label) == 0u) {
      throw Error("name vocabulary label '" + label + "' does not occur in the training split (vocabulary leakage)");
    }
  }
}

namespace {

const std::vector<std::string>& labels_of(const MultitaskData& data, const std::string& id) {
  const auto it = data.labels.find(id);
  if (it == data.labels.end()) throw Error("no labels for record '" + id + "'");
  return it->second;
}

double validation_f1(const Checkpoint& ckpt, const MultitaskData& data, std::size_t cap) {
  const std::size_t n = std::min(cap, data.valid.size());
  const std::vector<ingest::FunctionRecord> recs(data.valid.begin(), data.valid.begin() + static_cast<std::ptrdiff_t>(n));
  const auto preds = predict_names(ckpt, recs, static_cast<std::size_t>(ckpt.config.model.max_name_len));
  metrics::EvalCounts counts;
  for (std::size_t i = 0; i < n; ++i) counts += metrics::word_level_counts(preds[i], labels_of(data, recs[i].id));
  return metrics::prf(counts).f1;
}

}  // namespace

MultitaskResult train_multitask(const MultitaskData& data, const TrainConfig& config, const Checkpoint* alm_checkpoint,
                                Ablation ablation, const tasks::NameVocabulary* vocab,
                                const std::filesystem::path& out_dir) {
  config.validate();
  if (data.train.empty()) throw Error("training split is empty");
  {
    std::set<std::string> held_out;
    for (const auto& r : data.valid) held_out.insert(r.id);
    for (const auto& r : data.train) {
      if (held_out.count(r.id) != 0u) throw Error("record '" + r.id + "' is in both the training and validation splits");
    }
  }

  std::vector<std::vector<std::string>> train_labels;
  train_labels.reserve(data.train.size());
  for (const auto& r : data.train) train_labels.push_back(labels_of(data, r.id));

  MultitaskResult result;
  Checkpoint& last = result.last;
  last.config = config;
  if (vocab != nullptr) {
    check_vocabulary_leakage(*vocab, data);
    last.name_vocab = *vocab;
  } else {
    last.name_vocab = tasks::NameVocabulary::build(train_labels);
  }

  const bool use_alm = alm_checkpoint != nullptr && ablation != Ablation::no_pretrain;
  if (use_alm && !(alm_checkpoint->config.model == config.model)) {
    throw Error("ALM checkpoint model configuration differs from the training configuration");
  }
  last.asm_vocab = use_alm ? alm_checkpoint->asm_vocab : encoder::AsmVocabulary::build(data.train);

  last.params = ParamStore(config.seed);
  encoder::init_encoder_params(last.params, config.model, last.asm_vocab.size());
  tasks::init_task_params(last.params, config.model, last.name_vocab->size());
  if (use_alm) {
    for (const auto& [name, e] : alm_checkpoint->params.entries()) {
      if (name.rfind("alm.", 0) == 0) continue;
      if (!last.params.contains(name)) throw Error("ALM checkpoint has unexpected parameter '" + name + "'");
      auto& dst = last.params.value(name);
      if (dst.rows() != e.value.rows() || dst.cols() != e.value.cols()) {
        throw Error("ALM checkpoint parameter '" + name + "' has a different shape");
      }
      dst = e.value;
    }
  }
  last.state.phase = "multitask";
  last.state.best_metric = -1.0;

  const double lambda2 = ablation == Ablation::no_similarity ? 0.0 : config.lambda2;
  const bool similarity = lambda2 > 0.0;
  std::optional<tasks::TripletSampler> sampler;
  if (similarity) {
    sampler.emplace(data.train, train_labels);
    if (sampler->eligible_anchors() == 0) throw Error("no training record has a same-source positive");
  }
  std::unordered_map<std::string, std::size_t> train_index;
  for (std::size_t i = 0; i < data.train.size(); ++i) train_index.emplace(data.train[i].id, i);

  const bool validate = config.eval_every > 0 && !data.valid.empty();
  result.best = last;
  const auto& model = config.model;
  for (std::size_t step = 1; step <= config.max_steps; ++step) {
    std::mt19937_64 rng(step_seed(config.seed, step));
    std::vector<tasks::TrainTriplet> triplets;
    std::vector<std::size_t> anchors;
    if (similarity) {
      for (std::size_t b = 0; b < config.batch_size; ++b) triplets.push_back(sampler->sample(rng));
      for (const auto& t : triplets) anchors.push_back(train_index.at(t.anchor_id));
    } else {
      anchors = sample_without_replacement(data.train.size(), config.batch_size, rng);
    }

    ad::Tape tape;
    const nn::Context ctx{tape, last.params, true, model.dropout, &rng};
    std::unordered_map<std::string, ad::Var> emb;
    auto encode = [&](std::size_t i) -> const ad::Var& {
      const auto& rec = data.train[i];
      auto it = emb.find(rec.id);
      if (it == emb.end()) {
        it = emb.emplace(rec.id, encoder::encode_function(ctx, model, last.asm_vocab, rec).emb).first;
        result.gradient_record_ids.insert(rec.id);
      }
      return it->second;
    };

    ad::Var jcg;
    for (const auto i : anchors) {
      const auto l = tasks::name_loss(ctx, model, encode(i), last.name_vocab->encode(train_labels[i]));
      jcg = jcg.valid() ? ad::add(jcg, l) : l;
    }
    jcg = ad::scale(jcg, 1.0 / static_cast<double>(anchors.size()));

    ad::Var jcs;
    if (similarity) {
      for (const auto& t : triplets) {
        const auto ha = tasks::similarity_h(encode(train_index.at(t.anchor_id)));
        const auto hp = tasks::similarity_h(encode(train_index.at(t.positive_id)));
        const auto hn = tasks::similarity_h(encode(train_index.at(t.negative_id)));
        const auto l = tasks::ranking_loss(tasks::score(ctx, ha, hp), tasks::score(ctx, ha, hn), config.margin,
                                           config.paper_literal_jcs);
        jcs = jcs.valid() ? ad::add(jcs, l) : l;
      }
      jcs = ad::scale(jcs, 1.0 / static_cast<double>(triplets.size()));
    }

    const auto total = tasks::joint_loss(jcg, jcs, config.lambda1, lambda2);
    tape.backward(total);
    tape.accumulate_into(last.params);
    adam_step(last.params, config, step);
    result.train_log.push_back({step, total.scalar(), jcg.scalar(), jcs.valid() ? jcs.scalar() : 0.0});
    last.state.step = step;
    result.steps_run = step;

    if (validate && step % config.eval_every == 0) {
      const double f1 = validation_f1(last, data, config.max_valid);
      result.valid_f1.emplace_back(step, f1);
      if (f1 > last.state.best_metric) {
        last.state.best_metric = f1;
        last.state.best_step = step;
        last.state.bad_evals = 0;
        result.best = last;
      } else if (++last.state.bad_evals >= config.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  if (!validate) result.best = last;
  if (!out_dir.empty()) {
    result.best.save(out_dir / "best");
    last.save(out_dir / "last");
  }
  return result;
}

// ---- evaluation helpers ---------------------------------------------------------------------------

namespace {

const tasks::NameVocabulary& require_names(const Checkpoint& ckpt) {
  if (!ckpt.name_vocab) throw Error("checkpoint has no name vocabulary (was it produced by multi-task training?)");
  return *ckpt.name_vocab;
}

Eigen::RowVectorXd eval_h(const Checkpoint& ckpt, const ingest::FunctionRecord& rec) {
  ad::Tape tape;
  const auto enc = encoder::encode_function(eval_context(tape, ckpt.params), ckpt.config.model, ckpt.asm_vocab, rec);
  return tasks::similarity_h(enc.emb.value());
}

}  // namespace

std::vector<std::vector<std::string>> predict_names(const Checkpoint& ckpt,
                                                    const std::vector<ingest::FunctionRecord>& records,
                                                    std::size_t max_len, std::size_t jobs) {
  const auto& names = require_names(ckpt);
  std::vector<std::vector<std::string>> out(records.size());
  util::parallel_for(records.size(), jobs, [&](std::size_t i) {
    ad::Tape tape;
    const auto ctx = eval_context(tape, ckpt.params);
    const auto enc = encoder::encode_function(ctx, ckpt.config.model, ckpt.asm_vocab, records[i]);
    out[i] = tasks::predict_name(ctx, ckpt.config.model, enc.emb, names, max_len);
  });
  return out;
}

double similarity(const Checkpoint& ckpt, const ingest::FunctionRecord& a, const ingest::FunctionRecord& b) {
  const auto head = tasks::SimilarityHeadParams::from_store(ckpt.params, ckpt.config.margin);
  return tasks::score(eval_h(ckpt, a), eval_h(ckpt, b), head);
}

std::pair<double, double> mean_triplet_scores(const Checkpoint& ckpt, const std::vector<ingest::FunctionRecord>& records,
                                              const std::map<std::string, std::vector<std::string>>& labels,
                                              std::size_t count, std::uint64_t seed) {
  if (count == 0) throw Error("mean_triplet_scores needs at least one triplet");
  std::vector<std::vector<std::string>> seqs;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto it = labels.find(records[i].id);
    if (it == labels.end()) throw Error("no labels for record '" + records[i].id + "'");
    seqs.push_back(it->second);
    index.emplace(records[i].id, i);
  }
  const tasks::TripletSampler sampler(records, seqs);
  const auto head = tasks::SimilarityHeadParams::from_store(ckpt.params, ckpt.config.margin);
  std::map<std::string, Eigen::RowVectorXd> cache;
  auto h = [&](const std::string& id) -> const Eigen::RowVectorXd& {
    auto it = cache.find(id);
    if (it == cache.end()) it = cache.emplace(id, eval_h(ckpt, records[index.at(id)])).first;
    return it->second;
  };
  std::mt19937_64 rng(seed);
  double pos = 0.0;
  double neg = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto t = sampler.sample(rng);
    pos += tasks::score(h(t.anchor_id), h(t.positive_id), head);
    neg += tasks::score(h(t.anchor_id), h(t.negative_id), head);
  }
  return {pos / static_cast<double>(count), neg / static_cast<double>(count)};
}

double mean_name_loss(const Checkpoint& ckpt, const std::vector<ingest::FunctionRecord>& records,
                      const std::map<std::string, std::vector<std::string>>& labels) {
  if (records.empty()) throw Error("mean_name_loss needs at least one record");
  const auto& names = require_names(ckpt);
  double total = 0.0;
  for (const auto& rec : records) {
    const auto it = labels.find(rec.id);
    if (it == labels.end()) throw Error("no labels for record '" + rec.id + "'");
    ad::Tape tape;
    const auto ctx = eval_context(tape, ckpt.params);
    const auto enc = encoder::encode_function(ctx, ckpt.config.model, ckpt.asm_vocab, rec);
    total += tasks::name_loss(ctx, ckpt.config.model, enc.emb, names.encode(it->second)).scalar();
  }
  return total / static_cast<double>(records.size());
}

}  // namespace epitome::trainer
