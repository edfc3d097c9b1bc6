#include "epitome/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "epitome/error.hpp"
#include "epitome/ingest.hpp"
#include "epitome/label_relations.hpp"
#include "epitome/metrics.hpp"
#include "epitome/name_tokenizer.hpp"
#include "epitome/pipeline.hpp"
#include "epitome/pretrain_data.hpp"
#include "epitome/synthetic.hpp"
#include "epitome/trainer.hpp"
#include "epitome/util.hpp"

#ifndef EPITOME_DEFAULT_DATA_DIR
#define EPITOME_DEFAULT_DATA_DIR "data"
#endif

namespace epitome::cli {

namespace fs = std::filesystem;

fs::path default_data_dir() {
  if (const char* env = std::getenv("EPITOME_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return EPITOME_DEFAULT_DATA_DIR;
}

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  bool verbose = false;
};

struct Runner {
  std::ostream& out;
  std::ostream& err;
  Globals g;
  CommandResult result;

  void log(const std::string& msg) const {
    if (g.verbose) err << msg << '\n';
  }
  void say(const std::string& msg) {
    out << msg << '\n';
    result.summary += msg + "\n";
  }
  void wrote(const fs::path& p) { result.artifacts_written.push_back(p); }
  void write(const fs::path& p, const std::string& content) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    util::write_file(p, content);
    wrote(p);
  }
};

std::string labels_text(const std::vector<std::string>& labels) { return util::join(labels, " "); }

std::vector<ingest::FunctionRecord> load_normalized(const fs::path& path) {
  auto records = ingest::parse_function_records(path);
  for (auto& r : records) r = ingest::normalize_record(std::move(r));
  return records;
}

pipeline::LabelPreprocessor load_preprocessor(const std::string& corpus, const std::string& lexicon,
                                              const std::string& canonical) {
  const fs::path c = corpus.empty() ? default_data_dir() / "name_corpus.txt" : fs::path(corpus);
  const fs::path l = lexicon.empty() ? default_data_dir() / "lexicon.tsv" : fs::path(lexicon);
  return pipeline::LabelPreprocessor::load(c, l, canonical);
}

struct LabelRow {
  std::vector<std::string> labels;
  std::vector<std::string> extra;
};

// `id<TAB>labels[<TAB>extra...]`, labels space-separated.
std::vector<std::pair<std::string, LabelRow>> read_label_tsv(const fs::path& path) {
  std::vector<std::pair<std::string, LabelRow>> rows;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (const auto& line : util::read_lines(path)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    auto cols = util::split(line, '\t');
    if (cols.empty() || cols[0].empty()) throw Error(path.string() + ":" + std::to_string(line_no) + ": missing id");
    if (!seen.insert(cols[0]).second) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + cols[0] + "'");
    }
    LabelRow row;
    if (cols.size() > 1) row.labels = util::split_whitespace(cols[1]);
    for (std::size_t i = 2; i < cols.size(); ++i) row.extra.push_back(cols[i]);
    rows.emplace_back(cols[0], std::move(row));
  }
  return rows;
}

// One label per line, or the first column of a name-vocabulary TSV; specials skipped.
std::vector<std::string> read_label_list(const fs::path& path) {
  std::vector<std::string> labels;
  for (const auto& line : util::read_lines(path)) {
    const auto t = util::trim(line);
    if (t.empty()) continue;
    auto label = util::split(t, '\t').front();
    if (label.size() > 2 && label.front() == '<' && label.back() == '>') continue;
    labels.push_back(std::move(label));
  }
  return labels;
}

nlohmann::json prf_json(const metrics::Prf& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

std::string fmt(double v) { return util::format_double(v); }

// ---- subcommand handlers ---------------------------------------------------------------

struct IngestOpts {
  std::string input, out, splits;
  bool normalize = false;
  int folds = 5;
};

void do_ingest(Runner& r, const IngestOpts& o) {
  auto records = ingest::parse_function_records(o.input);
  if (o.normalize) {
    for (auto& rec : records) rec = ingest::normalize_record(std::move(rec));
  }
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  ingest::write_function_records(o.out, records);
  r.wrote(o.out);
  if (!o.splits.empty()) {
    std::string tsv;
    for (const auto& s : ingest::split_by_source(records, o.folds, r.g.seed)) {
      for (const auto& [part, ids] : {std::pair{"train", &s.train}, {"valid", &s.valid}, {"test", &s.test}}) {
        for (const auto& id : *ids) tsv += std::to_string(s.fold_id) + "\t" + part + "\t" + id + "\n";
      }
    }
    r.write(o.splits, tsv);
  }
  r.say("ingested " + std::to_string(records.size()) + " records");
}

struct TokenizeOpts {
  std::string names, corpus, lexicon, canonical, out;
};

void do_tokenize(Runner& r, const TokenizeOpts& o) {
  const auto pre = load_preprocessor(o.corpus, o.lexicon, o.canonical);
  std::vector<std::string> names;
  for (const auto& line : util::read_lines(o.names)) {
    const auto t = util::trim(line);
    if (!t.empty()) names.emplace_back(t);
  }
  std::vector<std::string> labels(names.size());
  util::parallel_for(names.size(), r.g.jobs, [&](std::size_t i) { labels[i] = labels_text(pre(names[i])); });
  std::string tsv;
  for (std::size_t i = 0; i < names.size(); ++i) tsv += names[i] + "\t" + labels[i] + "\n";
  r.write(o.out, tsv);
  r.say("tokenized " + std::to_string(names.size()) + " names");
}

struct RelateOpts {
  std::string vocab, corpus, external, deny, out, canonical_out;
  int dim = 32;
  int epochs = 50;
};

void do_relate(Runner& r, const RelateOpts& o) {
  const auto vocab = read_label_list(o.vocab);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& line : util::read_lines(o.corpus)) {
    auto toks = util::split_whitespace(line);
    if (!toks.empty()) corpus.push_back(std::move(toks));
  }
  relations::EmbeddingConfig ec;
  ec.dim = o.dim;
  ec.epochs = o.epochs;
  ec.seed = r.g.seed;
  r.log("training skip-gram embeddings");
  const auto sg = relations::train_skipgram(corpus, ec);
  r.log("training subword embeddings");
  const auto sw = relations::train_subword_embeddings(corpus, ec);
  std::optional<relations::ExternalRelations> external;
  std::optional<relations::ExternalRelations> deny;
  if (!o.external.empty()) external = relations::ExternalRelations::load(o.external);
  if (!o.deny.empty()) deny = relations::ExternalRelations::load(o.deny);
  relations::GroupingOptions go;
  go.external = external ? &*external : nullptr;
  go.deny = deny ? &*deny : nullptr;
  const auto lex = relations::build_relation_groups(vocab, &sg, &sw, go);
  if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
  lex.save(o.out, o.canonical_out);
  r.wrote(o.out);
  if (!o.canonical_out.empty()) r.wrote(o.canonical_out);
  r.say("found " + std::to_string(lex.relations.size()) + " relations over " + std::to_string(vocab.size()) +
        " labels");
}

struct PretrainDataOpts {
  std::string input, task, out;
  double mask_ratio = pretrain::kDefaultMaskRatio;
  std::size_t window = pretrain::kDefaultCdiWindow;
  std::size_t negatives = 1;
};

void do_pretrain_data(Runner& r, const PretrainDataOpts& o) {
  const auto records = load_normalized(o.input);
  std::string jsonl;
  std::size_t count = 0;
  for (const auto& rec : records) {
    const auto rs = pretrain::derive_seed(r.g.seed, rec.id);
    if (o.task == "infill") {
      std::vector<std::string> tokens;
      for (const auto& inst : rec.instructions) {
        const auto t = inst.tokens();
        tokens.insert(tokens.end(), t.begin(), t.end());
      }
      if (tokens.empty()) continue;
      jsonl += pretrain::to_json_line(pretrain::text_infilling(tokens, o.mask_ratio, rs), rec.id) + "\n";
      ++count;
    } else {
      const auto pairs = o.task == "cdi" ? pretrain::cdi_pairs(rec, o.window, o.negatives, rs)
                                         : pretrain::dui_pairs(rec, o.negatives, rs);
      for (const auto& s : pairs) jsonl += pretrain::to_json_line(s, rec.id) + "\n";
      count += pairs.size();
    }
  }
  r.write(o.out, jsonl);
  r.say("wrote " + std::to_string(count) + " " + o.task + " samples");
}

struct TrainOpts {
  std::string config, input, out, ablate = "none", corpus, lexicon, canonical, alm;
  int fold = 0;
  int folds = 5;
  bool paper_literal_jcs = false;
};

void do_train(Runner& r, const TrainOpts& o, bool seed_given) {
  auto config = trainer::TrainConfig::load(o.config);
  if (seed_given) config.seed = r.g.seed;
  if (o.paper_literal_jcs) config.paper_literal_jcs = true;
  const auto ablation = trainer::parse_ablation(o.ablate);
  const auto records = load_normalized(o.input);
  const auto splits = ingest::split_by_source(records, o.folds, config.seed);
  if (o.fold < 0 || o.fold >= o.folds) throw Error("--fold must lie in [0, " + std::to_string(o.folds) + ")");
  const auto& split = splits[static_cast<std::size_t>(o.fold)];

  std::map<std::string, const ingest::FunctionRecord*> by_id;
  for (const auto& rec : records) by_id.emplace(rec.id, &rec);
  auto pick = [&](const std::vector<std::string>& ids) {
    std::vector<ingest::FunctionRecord> v;
    for (const auto& id : ids) v.push_back(*by_id.at(id));
    return v;
  };
  trainer::MultitaskData data;
  data.train = pick(split.train);
  data.valid = pick(split.valid);
  const auto pre = load_preprocessor(o.corpus, o.lexicon, o.canonical);
  data.labels = pipeline::preprocess_records(pre, data.train, r.g.jobs);
  for (auto& [id, labels] : pipeline::preprocess_records(pre, data.valid, r.g.jobs)) data.labels.emplace(id, labels);
  r.log("fold " + std::to_string(o.fold) + ": " + std::to_string(data.train.size()) + " train, " +
        std::to_string(data.valid.size()) + " valid records");

  const fs::path out = o.out;
  std::optional<trainer::Checkpoint> alm;
  if (ablation != trainer::Ablation::no_pretrain) {
    if (!o.alm.empty()) {
      alm = trainer::Checkpoint::load(o.alm);
    } else if (config.pretrain_steps > 0) {
      auto pc = config;
      pc.max_steps = config.pretrain_steps;
      const auto vocab = encoder::AsmVocabulary::build(data.train);
      const auto pt = trainer::pretrain_alm(trainer::build_pretrain_data(data.train, pc),
                                            trainer::build_pretrain_data(data.valid, pc), vocab, pc, out / "alm");
      std::string log = "step\ttask\tloss\n";
      for (const auto& t : pt.train_log) log += std::to_string(t.step) + "\t" + t.task + "\t" + fmt(t.loss) + "\n";
      r.write(out / "alm" / "train_log.tsv", log);
      r.wrote(out / "alm" / "best");
      r.wrote(out / "alm" / "last");
      alm = pt.best;
      r.log("pretraining done after " + std::to_string(pt.gradient_steps) + " steps");
    }
  }
  const auto res = trainer::train_multitask(data, config, alm ? &*alm : nullptr, ablation, nullptr, out);
  r.wrote(out / "best");
  r.wrote(out / "last");
  std::string log = "step\tloss\tj_cg\tj_cs\n";
  for (const auto& s : res.train_log) {
    log += std::to_string(s.step) + "\t" + fmt(s.loss) + "\t" + fmt(s.j_cg) + "\t" + fmt(s.j_cs) + "\n";
  }
  r.write(out / "train_log.tsv", log);
  std::string vf = "step\tf1\n";
  for (const auto& [step, f1] : res.valid_f1) vf += std::to_string(step) + "\t" + fmt(f1) + "\n";
  r.write(out / "valid_f1.tsv", vf);
  r.say("trained " + std::to_string(res.steps_run) + " steps" + (res.early_stopped ? " (early stop)" : "") +
        "; best validation F1 " + fmt(std::max(0.0, res.best.state.best_metric)));
}

struct PredictOpts {
  std::string model, input, vocab, out;
  std::size_t max_len = 8;
};

void do_predict(Runner& r, const PredictOpts& o) {
  auto ckpt = trainer::Checkpoint::load(o.model);
  if (!o.vocab.empty()) {
    auto v = tasks::NameVocabulary::load(o.vocab);
    if (ckpt.name_vocab && v.size() != ckpt.name_vocab->size()) {
      throw Error("--vocab has " + std::to_string(v.size()) + " entries but the model expects " +
                  std::to_string(ckpt.name_vocab->size()));
    }
    ckpt.name_vocab = std::move(v);
  }
  const auto records = load_normalized(o.input);
  const auto preds = trainer::predict_names(ckpt, records, o.max_len, r.g.jobs);
  std::string tsv;
  for (std::size_t i = 0; i < records.size(); ++i) tsv += records[i].id + "\t" + labels_text(preds[i]) + "\n";
  r.write(o.out, tsv);
  r.say("predicted " + std::to_string(records.size()) + " names");
}

struct SimilarityOpts {
  std::string model, input, a, b;
};

void do_similarity(Runner& r, const SimilarityOpts& o) {
  const auto ckpt = trainer::Checkpoint::load(o.model);
  const auto records = load_normalized(o.input);
  auto find = [&](const std::string& id) -> const ingest::FunctionRecord& {
    for (const auto& rec : records) {
      if (rec.id == id) return rec;
    }
    throw Error("no record with id '" + id + "' in " + o.input);
  };
  r.say(fmt(trainer::similarity(ckpt, find(o.a), find(o.b))));
}

struct EvaluateOpts {
  std::string pred, truth, group_by, out, train_vocab, kl_reference;
  bool literal_counts = false;
};

void do_evaluate(Runner& r, const EvaluateOpts& o) {
  const auto truth = read_label_tsv(o.truth);
  std::map<std::string, std::vector<std::string>> pred;
  for (auto& [id, row] : read_label_tsv(o.pred)) pred.emplace(id, std::move(row.labels));
  std::set<std::string> truth_ids;
  for (const auto& [id, row] : truth) truth_ids.insert(id);
  for (const auto& [id, labels] : pred) {
    if (truth_ids.count(id) == 0u) throw Error("prediction for unknown id '" + id + "'");
  }

  std::vector<std::string> keys;
  for (const auto& k : util::split(o.group_by, ',')) {
    const auto t = std::string(util::trim(k));
    if (t.empty()) continue;
    if (t != "arch" && t != "opt") throw Error("--group-by accepts arch and opt, got '" + t + "'");
    keys.push_back(t);
  }

  metrics::EvalCounts overall;
  std::map<std::vector<std::string>, std::pair<metrics::EvalCounts, std::size_t>> groups;
  for (const auto& [id, row] : truth) {
    const auto it = pred.find(id);
    const auto counts = metrics::word_level_counts(it == pred.end() ? std::vector<std::string>{} : it->second,
                                                   row.labels, o.literal_counts);
    overall += counts;
    std::vector<std::string> gk;
    for (const auto& k : keys) {
      const std::size_t col = k == "arch" ? 0 : 1;
      if (row.extra.size() <= col) throw Error("truth row '" + id + "' lacks the " + k + " column");
      gk.push_back(row.extra[col]);
    }
    auto& g = groups[gk];
    g.first += counts;
    ++g.second;
  }

  nlohmann::json report;
  const auto op = metrics::prf(overall);
  report["functions"] = truth.size();
  report["counting"] = o.literal_counts ? "literal" : "set";
  report["overall"] = prf_json(op);
  report["overall"]["tp"] = overall.tp;
  report["overall"]["fp"] = overall.fp;
  report["overall"]["fn"] = overall.fn;
  std::vector<metrics::WeightedPrf> weighted;
  nlohmann::json group_list = nlohmann::json::array();
  for (const auto& [gk, g] : groups) {
    const auto p = metrics::prf(g.first);
    weighted.push_back({static_cast<double>(g.second), p});
    nlohmann::json entry = prf_json(p);
    for (std::size_t i = 0; i < keys.size(); ++i) entry[keys[i]] = gk[i];
    entry["functions"] = g.second;
    group_list.push_back(entry);
  }
  report["groups"] = group_list;
  if (!weighted.empty()) report["weighted_macro"] = prf_json(metrics::weighted_macro(weighted));

  std::vector<std::vector<std::string>> truth_seqs;
  for (const auto& [id, row] : truth) truth_seqs.push_back(row.labels);
  if (!o.train_vocab.empty()) {
    std::vector<std::string> test_labels;
    for (const auto& s : truth_seqs) test_labels.insert(test_labels.end(), s.begin(), s.end());
    report["oov_ratio"] = metrics::oov_ratio(test_labels, read_label_list(o.train_vocab));
  }
  if (!o.kl_reference.empty()) {
    std::vector<std::vector<std::string>> ref;
    for (const auto& [id, row] : read_label_tsv(o.kl_reference)) ref.push_back(row.labels);
    report["kl"] = {{"reference", o.kl_reference},
                    {"kl_truth_reference", metrics::kl_divergence(metrics::label_distribution(truth_seqs),
                                                                  metrics::label_distribution(ref))}};
  }
  if (!o.out.empty()) r.write(o.out, report.dump(2) + "\n");
  r.say("P=" + fmt(op.precision) + " R=" + fmt(op.recall) + " F1=" + fmt(op.f1));
}

struct GradcheckOpts {
  std::string path = "all";
  double eps = 1e-5;
  std::size_t max_coords = 500;
  double threshold = 1e-4;
};

void do_gradcheck(Runner& r, const GradcheckOpts& o) {
  auto fixture = trainer::make_gradcheck_fixture(r.g.seed);
  std::vector<std::string> paths = trainer::loss_paths();
  if (o.path != "all") paths = {o.path};
  trainer::GradCheckOptions gopt;
  gopt.eps = o.eps;
  gopt.max_coords = o.max_coords;
  gopt.seed = r.g.seed;
  bool ok = true;
  for (const auto& p : paths) {
    const auto res = trainer::grad_check(trainer::loss_path(fixture, p), fixture.params, gopt);
    const bool pass = res.max_rel_error < o.threshold && res.checked > 0;
    ok = ok && pass;
    r.say(p + "\tmax_rel_error=" + fmt(res.max_rel_error) + "\tchecked=" + std::to_string(res.checked) +
          "\tkinks=" + std::to_string(res.kinks) + "\t" + (pass ? "PASS" : "FAIL"));
  }
  if (!ok) r.result.exit_code = 1;
}

struct SynthOpts {
  std::string out, names_out, corpus_out;
  std::size_t sources = 20;
  std::string variants = "O0,O2,O3";
  std::size_t names = 0;
};

void do_synth(Runner& r, const SynthOpts& o) {
  synthetic::DatasetOptions d;
  d.sources = o.sources;
  d.seed = r.g.seed;
  d.variants.clear();
  for (const auto& v : util::split(o.variants, ',')) d.variants.push_back(ingest::parse_opt(util::trim(v)));
  if (!o.out.empty()) {
    const auto records = synthetic::synthetic_dataset(d);
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    ingest::write_function_records(o.out, records);
    r.wrote(o.out);
    r.say("wrote " + std::to_string(records.size()) + " records");
  }
  if (!o.names_out.empty()) {
    std::string tsv;
    for (const auto& n : synthetic::synthetic_names(o.names, r.g.seed)) tsv += n.raw + "\t" + labels_text(n.labels) + "\n";
    r.write(o.names_out, tsv);
    r.say("wrote " + std::to_string(o.names) + " names");
  }
  if (!o.corpus_out.empty()) {
    std::string text;
    for (const auto& line : synthetic::synthetic_name_corpus(o.names, r.g.seed)) text += line + "\n";
    r.write(o.corpus_out, text);
  }
}

}  // namespace

CommandResult run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Runner r{out, err, {}, {}};
  CLI::App app{"Function name prediction for stripped binaries", "epitome"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Print help for every subcommand");
  auto* seed_opt = app.add_option("--seed", r.g.seed, "Random seed")->capture_default_str();
  app.add_option("--jobs", r.g.jobs, "Worker threads for per-record stages")->capture_default_str()->check(
      CLI::PositiveNumber);
  app.add_flag("--verbose", r.g.verbose, "Log progress to stderr");

  IngestOpts ingest_o;
  auto* ingest_c = app.add_subcommand("ingest", "Validate JSONL function records, optionally normalize and split");
  ingest_c->add_option("--input", ingest_o.input, "Input JSONL")->required();
  ingest_c->add_option("--out", ingest_o.out, "Output JSONL")->required();
  ingest_c->add_flag("--normalize", ingest_o.normalize, "Normalize instructions");
  ingest_c->add_option("--splits", ingest_o.splits, "Write source-grouped folds as TSV fold/partition/id");
  ingest_c->add_option("--folds", ingest_o.folds, "Number of folds")->capture_default_str();

  TokenizeOpts tok_o;
  auto* tok_c = app.add_subcommand("tokenize", "Split function names into labels");
  tok_c->add_option("--names", tok_o.names, "One name per line")->required();
  tok_c->add_option("--corpus", tok_o.corpus, "Name corpus (default: bundled)");
  tok_c->add_option("--lexicon", tok_o.lexicon, "Lexicon TSV (default: bundled)");
  tok_c->add_option("--canonical", tok_o.canonical, "Canonical label map from relate");
  tok_c->add_option("--out", tok_o.out, "Output TSV raw_name<TAB>labels")->required();

  RelateOpts rel_o;
  auto* rel_c = app.add_subcommand("relate", "Find related labels and build a canonical map");
  rel_c->add_option("--vocab", rel_o.vocab, "Label list or name vocabulary TSV")->required();
  rel_c->add_option("--corpus", rel_o.corpus, "Whitespace-tokenized label corpus")->required();
  rel_c->add_option("--external", rel_o.external, "External relation TSV");
  rel_c->add_option("--deny", rel_o.deny, "Rejected pairs TSV");
  rel_c->add_option("--out", rel_o.out, "Relation TSV label_a<TAB>label_b<TAB>kind")->required();
  rel_c->add_option("--canonical-out", rel_o.canonical_out, "Canonical map TSV");
  rel_c->add_option("--dim", rel_o.dim, "Embedding dimension")->capture_default_str();
  rel_c->add_option("--epochs", rel_o.epochs, "Embedding epochs")->capture_default_str();

  PretrainDataOpts pd_o;
  auto* pd_c = app.add_subcommand("pretrain-data", "Generate pretraining samples");
  pd_c->add_option("--input", pd_o.input, "Function records JSONL")->required();
  pd_c->add_option("--task", pd_o.task, "infill, cdi or dui")->required()->check(
      CLI::IsMember({"infill", "cdi", "dui"}));
  pd_c->add_option("--out", pd_o.out, "Output JSONL")->required();
  pd_c->add_option("--mask-ratio", pd_o.mask_ratio, "Infilling mask ratio")->capture_default_str();
  pd_c->add_option("--window", pd_o.window, "CDI window")->capture_default_str();
  pd_c->add_option("--negatives", pd_o.negatives, "Negatives per positive")->capture_default_str();

  TrainOpts train_o;
  auto* train_c = app.add_subcommand("train", "Pretrain the assembly model and fine-tune both tasks");
  train_c->add_option("--config", train_o.config, "key=value config file")->required();
  train_c->add_option("--input", train_o.input, "Function records JSONL")->required();
  train_c->add_option("--out", train_o.out, "Output directory")->required();
  train_c->add_option("--fold", train_o.fold, "Fold index")->capture_default_str();
  train_c->add_option("--folds", train_o.folds, "Number of folds")->capture_default_str();
  train_c->add_option("--ablate", train_o.ablate, "none, no-pretrain or no-similarity")
      ->capture_default_str()
      ->check(CLI::IsMember({"none", "no-pretrain", "no-similarity"}));
  train_c->add_flag("--paper-literal-jcs", train_o.paper_literal_jcs, "Use the printed ranking-loss sign");
  train_c->add_option("--alm", train_o.alm, "Existing pretraining checkpoint to start from");
  train_c->add_option("--corpus", train_o.corpus, "Name corpus (default: bundled)");
  train_c->add_option("--lexicon", train_o.lexicon, "Lexicon TSV (default: bundled)");
  train_c->add_option("--canonical", train_o.canonical, "Canonical label map");

  PredictOpts pred_o;
  auto* pred_c = app.add_subcommand("predict", "Predict function names");
  pred_c->add_option("--model", pred_o.model, "Checkpoint directory")->required();
  pred_c->add_option("--input", pred_o.input, "Function records JSONL")->required();
  pred_c->add_option("--vocab", pred_o.vocab, "Name vocabulary TSV (default: the checkpoint's)");
  pred_c->add_option("--max-len", pred_o.max_len, "Maximum labels per name")->capture_default_str();
  pred_c->add_option("--out", pred_o.out, "Output TSV id<TAB>labels")->required();

  SimilarityOpts sim_o;
  auto* sim_c = app.add_subcommand("similarity", "Print the similarity score of two functions");
  sim_c->add_option("--model", sim_o.model, "Checkpoint directory")->required();
  sim_c->add_option("--input", sim_o.input, "Function records JSONL")->required();
  sim_c->add_option("--a", sim_o.a, "First record id")->required();
  sim_c->add_option("--b", sim_o.b, "Second record id")->required();

  EvaluateOpts eval_o;
  auto* eval_c = app.add_subcommand("evaluate", "Word-level precision, recall and F1");
  eval_c->add_option("--pred", eval_o.pred, "Predictions TSV id<TAB>labels")->required();
  eval_c->add_option("--truth", eval_o.truth, "Truth TSV id<TAB>labels[<TAB>arch<TAB>opt]")->required();
  eval_c->add_option("--group-by", eval_o.group_by, "Comma list of arch, opt");
  eval_c->add_option("--out", eval_o.out, "Report JSON");
  eval_c->add_option("--train-vocab", eval_o.train_vocab, "Training label vocabulary for the OOV ratio");
  eval_c->add_option("--kl-reference", eval_o.kl_reference, "Label TSV to compare distributions against");
  eval_c->add_flag("--literal-counts", eval_o.literal_counts, "Count duplicate labels per occurrence");

  GradcheckOpts gc_o;
  auto* gc_c = app.add_subcommand("gradcheck", "Finite-difference check of every loss path on a toy model");
  gc_c->add_option("--path", gc_o.path, "Loss path or 'all'")->capture_default_str();
  gc_c->add_option("--eps", gc_o.eps, "Central-difference step")->capture_default_str();
  gc_c->add_option("--max-coords", gc_o.max_coords, "Coordinates per path")->capture_default_str();
  gc_c->add_option("--threshold", gc_o.threshold, "Pass threshold")->capture_default_str();

  SynthOpts syn_o;
  auto* syn_c = app.add_subcommand("synth", "Write the synthetic dataset and name lists");
  syn_c->add_option("--out", syn_o.out, "Records JSONL");
  syn_c->add_option("--sources", syn_o.sources, "Source functions")->capture_default_str();
  syn_c->add_option("--variants", syn_o.variants, "Optimization levels")->capture_default_str();
  syn_c->add_option("--names", syn_o.names, "Number of synthetic names")->capture_default_str();
  syn_c->add_option("--names-out", syn_o.names_out, "Names TSV raw<TAB>labels");
  syn_c->add_option("--corpus-out", syn_o.corpus_out, "Name corpus lines");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return r.result;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return r.result;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    r.result.exit_code = 2;
    r.result.summary = e.what();
    return r.result;
  }

  try {
    if (ingest_c->parsed()) do_ingest(r, ingest_o);
    else if (tok_c->parsed()) do_tokenize(r, tok_o);
    else if (rel_c->parsed()) do_relate(r, rel_o);
    else if (pd_c->parsed()) do_pretrain_data(r, pd_o);
    else if (train_c->parsed()) do_train(r, train_o, seed_opt->count() > 0);
    else if (pred_c->parsed()) do_predict(r, pred_o);
    else if (sim_c->parsed()) do_similarity(r, sim_o);
    else if (eval_c->parsed()) do_evaluate(r, eval_o);
    else if (gc_c->parsed()) do_gradcheck(r, gc_o);
    else if (syn_c->parsed()) do_synth(r, syn_o);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    r.result.exit_code = 1;
    r.result.summary = e.what();
    r.result.artifacts_written.clear();
  }
  return r.result;
}

}  // namespace epitome::cli
