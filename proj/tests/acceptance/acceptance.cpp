#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <queue>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "epitome/encoder.hpp"
#include "epitome/ingest.hpp"
#include "epitome/label_relations.hpp"
#include "epitome/metrics.hpp"
#include "epitome/name_tokenizer.hpp"
#include "epitome/nn.hpp"
#include "epitome/pipeline.hpp"
#include "epitome/synthetic.hpp"
#include "epitome/trainer.hpp"
#include "epitome/util.hpp"

using namespace epitome;
namespace fs = std::filesystem;
using Labels = std::vector<std::string>;

namespace {

const fs::path kData = EPITOME_TEST_DATA_DIR;
const fs::path kFixtures = EPITOME_TEST_FIXTURE_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    o.pass = false;
    o.detail += " [over budget " + util::format_double(budget_s) + "s]";
  }
  if (!o.pass) ++failures;
  std::printf("%s criterion %2d: %s (%.2fs) %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), secs,
              o.detail.c_str());
  std::fflush(stdout);
}

std::string show(const Labels& l) { return "[" + util::join(l, " ") + "]"; }

// ---- oracles -------------------------------------------------------------------------

tokenizer::Boundaries exhaustive_rule(const tokenizer::RuleLexicon& lex, const std::string& name) {
  const std::size_t n = name.size();
  std::size_t best_cov = 0;
  std::size_t best_segs = 0;
  std::vector<std::size_t> best_cuts;
  bool have = false;
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<std::size_t> cuts;
    for (std::size_t p = 1; p < n; ++p) {
      if (mask & (1u << (p - 1))) cuts.push_back(p);
    }
    std::size_t cov = 0;
    bool ok = true;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= cuts.size() && ok; ++i) {
      const std::size_t end = i < cuts.size() ? cuts[i] : n;
      const auto seg = name.substr(start, end - start);
      if (lex.contains(seg)) cov += seg.size();
      else if (seg.size() != 1) ok = false;
      start = end;
    }
    if (!ok) continue;
    const std::size_t segs = cuts.size() + 1;
    if (!have || cov > best_cov || (cov == best_cov && (segs < best_segs || (segs == best_segs && cuts < best_cuts)))) {
      have = true;
      best_cov = cov;
      best_segs = segs;
      best_cuts = cuts;
    }
  }
  return {best_cuts.begin(), best_cuts.end()};
}

// Best global alignment score over every pair of substrings.
int brute_local(const std::string& a, const std::string& b) {
  int best = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      // Global DP anchored at (i, k); every cell is one candidate end point.
      const std::size_t n = a.size() - i;
      const std::size_t m = b.size() - k;
      std::vector<std::vector<int>> d(n + 1, std::vector<int>(m + 1));
      for (std::size_t p = 0; p <= n; ++p) d[p][0] = -static_cast<int>(p);
      for (std::size_t q = 0; q <= m; ++q) d[0][q] = -static_cast<int>(q);
      for (std::size_t p = 1; p <= n; ++p) {
        for (std::size_t q = 1; q <= m; ++q) {
          d[p][q] = std::max({d[p - 1][q - 1] + (a[i + p - 1] == b[k + q - 1] ? 1 : -1), d[p - 1][q] - 1,
                              d[p][q - 1] - 1});
          best = std::max(best, d[p][q]);
        }
      }
    }
  }
  return best;
}

std::set<std::size_t> bfs(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges, std::size_t v,
                          std::size_t k) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<std::size_t> dist(n, SIZE_MAX);
  std::queue<std::size_t> q;
  dist[v] = 0;
  q.push(v);
  while (!q.empty()) {
    const auto u = q.front();
    q.pop();
    for (auto w : adj[u]) {
      if (dist[w] == SIZE_MAX) {
        dist[w] = dist[u] + 1;
        q.push(w);
      }
    }
  }
  std::set<std::size_t> out;
  for (std::size_t u = 0; u < n; ++u) {
    if (u != v && dist[u] <= k) out.insert(u);
  }
  return out;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---- criteria ------------------------------------------------------------------------

Outcome metrics_exactness() {
  const auto half = metrics::prf(metrics::word_level_counts({"attrs", "find"}, {"attrs", "match"}));
  const auto full = metrics::prf(metrics::word_level_counts({"attrs", "match"}, {"attrs", "match"}));
  const bool ok = half.precision == 0.5 && half.recall == 0.5 && half.f1 == 0.5 && full.precision == 1.0 &&
                  full.recall == 1.0 && full.f1 == 1.0;
  return {ok, "P=" + util::format_double(half.precision) + " R=" + util::format_double(half.recall) +
                  " F1=" + util::format_double(half.f1) + "; identical F1=" + util::format_double(full.f1)};
}

Outcome tokenizer_fidelity() {
  const auto pre = pipeline::LabelPreprocessor::load(kData / "name_corpus.txt", kData / "lexicon.tsv");
  const auto timeset =
      tokenizer::apply_boundaries("timeset", tokenizer::rule_tokenize(pre.tokenizer.lexicon, "timeset"));
  std::ostringstream detail;
  detail << "timeset -> " << show(timeset) << ";";
  int matched = 0;
  int rows = 0;
  for (const auto& line : util::read_lines(kFixtures / "tokenize_expected.tsv")) {
    if (util::trim(line).empty()) continue;
    const auto cols = util::split(line, '\t');
    const auto want = util::split(cols.at(1), ' ');
    const auto got = pre(cols.at(0));
    ++rows;
    if (got == want) {
      ++matched;
    } else {
      detail << " deviation '" << cols[0] << "': got " << show(got) << " expected " << show(want) << ";";
    }
  }
  detail << " rows " << matched << "/" << rows;
  return {timeset == Labels{"time", "set"} && rows == 6 && matched >= 4, detail.str()};
}

Outcome rule_dp_oracle() {
  const Labels words = {"get", "set", "te", "time", "tim", "es", "et", "ge", "st", "tes",
                        "ti", "me", "ese", "gets", "sett", "mee", "tt", "s", "ime", "eg"};
  tokenizer::RuleLexicon lex;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i % 6 == 5) lex.add_abbreviation(words[i], words[i] + "full");
    else lex.add_word(words[i]);
  }
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> len(1, 12);
  const std::string alphabet = "getsim";
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    std::string name;
    for (int i = len(rng); i > 0; --i) name += alphabet[rng() % alphabet.size()];
    if (tokenizer::rule_tokenize(lex, name) != exhaustive_rule(lex, name)) ++mismatches;
  }
  return {mismatches == 0, "500 names, mismatches " + std::to_string(mismatches)};
}

Outcome smith_waterman_oracle() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> len(1, 10);
  int mismatches = 0;
  for (int t = 0; t < 1000; ++t) {
    std::string a;
    std::string b;
    for (int i = len(rng); i > 0; --i) a += "abcd"[rng() % 4];
    for (int i = len(rng); i > 0; --i) b += "abcd"[rng() % 4];
    if (relations::smith_waterman_score(a, b) != brute_local(a, b)) ++mismatches;
  }
  const double same = relations::sw_relative_similarity("set", "set");
  return {mismatches == 0 && same == 1.0,
          "1000 pairs, mismatches " + std::to_string(mismatches) + "; (set,set) -> " + util::format_double(same)};
}

Outcome gradient_integrity() {
  auto fixture = trainer::make_gradcheck_fixture();
  bool ok = true;
  std::ostringstream detail;
  for (const auto& path : trainer::loss_paths()) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = trainer::grad_check(trainer::loss_path(fixture, path), fixture.params);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = r.max_rel_error < 1e-4 && r.checked > 0 && secs < 60.0;
    ok = ok && pass;
    char buf[160];
    std::snprintf(buf, sizeof buf, " %s=%.2e(%zu coords, %zu kinks)", path.c_str(), r.max_rel_error, r.checked,
                  r.kinks);
    detail << buf;
  }
  return {ok, detail.str()};
}

Outcome khop_correctness() {
  std::mt19937_64 rng(303);
  int bad_sets = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 1 + rng() % 20;
    ingest::FineGrainedCfg g(n);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t e = rng() % (2 * n + 1); e > 0; --e) {
      const std::size_t a = rng() % n;
      const std::size_t b = rng() % n;
      if (a == b) continue;
      edges.emplace_back(a, b);
      g.add_edge(a, b, ingest::EdgeKind::jump);
    }
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t k = 1; k <= 4; ++k) {
        const auto got = ingest::khop_neighborhood(g, v, k);
        if (std::set<std::size_t>(got.begin(), got.end()) != bfs(n, edges, v, k)) ++bad_sets;
      }
    }
  }
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 1 + rng() % 12;
    ingest::FineGrainedCfg g(n);
    for (std::size_t e = 0; e < 2 * n; ++e) {
      const std::size_t a = rng() % n;
      const std::size_t b = rng() % n;
      if (a != b) g.add_edge(a, b, ingest::EdgeKind::fallthrough);
    }
    const Eigen::Index d = 4;
    ParamStore s(static_cast<std::uint64_t>(t) + 1);
    nn::add_linear(s, "gnn.l0.k1", 2 * d, d);
    s.value("gnn.l0.k1.b") = random_matrix(1, d, rng);
    const Matrix x = random_matrix(static_cast<Eigen::Index>(n), d, rng);
    ad::Tape tape;
    nn::Context ctx{tape, s};
    const Matrix got = encoder::khop_message_pass(ctx, g, tape.constant(x), 1, 1).value();
    // standalone 1-hop: relu([mean of neighbors ; self] W + b)
    Matrix want(static_cast<Eigen::Index>(n), d);
    for (std::size_t v = 0; v < n; ++v) {
      Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(d);
      const auto& nb = g.neighbors(v);
      for (auto u : nb) m += x.row(static_cast<Eigen::Index>(u));
      if (!nb.empty()) m /= static_cast<double>(nb.size());
      Eigen::RowVectorXd in(2 * d);
      in << m, x.row(static_cast<Eigen::Index>(v));
      want.row(static_cast<Eigen::Index>(v)) = (in * s.value("gnn.l0.k1.W") + s.value("gnn.l0.k1.b")).cwiseMax(0.0);
    }
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "100 graphs, bad neighborhoods %d; 20 one-hop cases, max diff %.1e", bad_sets, worst);
  return {bad_sets == 0 && worst < 1e-10, buf};
}

Outcome conv_node_vectors() {
  std::mt19937_64 rng(404);
  double worst = 0.0;
  int bad_lengths = 0;
  for (int t = 0; t < 50; ++t) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng() % 4);
    const Eigen::Index m = 3 + static_cast<Eigen::Index>(rng() % 10);
    const Matrix e = random_matrix(d, m, rng);
    std::vector<encoder::ConvKernel> kernels;
    for (Eigen::Index w = 1; w <= 3; ++w) kernels.push_back({random_matrix(d, w, rng), random_matrix(1, 1, rng)(0, 0)});
    const Eigen::VectorXd got = encoder::conv_node_vector(e, kernels);
    for (std::size_t k = 0; k < kernels.size(); ++k) {
      const auto& K = kernels[k].weights;
      std::vector<double> feature_map;
      for (Eigen::Index j = 0; j + K.cols() <= m; ++j) {
        double f = kernels[k].bias;
        for (Eigen::Index r = 0; r < d; ++r) {
          for (Eigen::Index c = 0; c < K.cols(); ++c) f += K(r, c) * e(r, j + c);
        }
        feature_map.push_back(std::max(f, 0.0));
      }
      if (static_cast<Eigen::Index>(feature_map.size()) != m - K.cols() + 1) ++bad_lengths;
      double mean = 0.0;
      for (double f : feature_map) mean += f;
      mean /= static_cast<double>(feature_map.size());
      worst = std::max(worst, std::abs(got(static_cast<Eigen::Index>(k)) - mean));
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "50 cases, max diff %.1e, bad map lengths %d", worst, bad_lengths);
  return {worst < 1e-10 && bad_lengths == 0, buf};
}

Outcome multitask_sanity() {
  auto records = synthetic::synthetic_dataset({});
  for (auto& r : records) r = ingest::normalize_record(r);
  const auto pre = pipeline::LabelPreprocessor::load(kData / "name_corpus.txt", kData / "lexicon.tsv");
  const auto labels = pipeline::preprocess_records(pre, records);
  const auto split = ingest::split_by_source(records, 5, 1).at(0);
  std::map<std::string, const ingest::FunctionRecord*> by_id;
  for (const auto& r : records) by_id[r.id] = &r;
  trainer::MultitaskData data;
  data.labels = labels;
  std::vector<ingest::FunctionRecord> held;
  for (const auto& id : split.train) data.train.push_back(*by_id.at(id));
  for (const auto& id : split.valid) held.push_back(*by_id.at(id));
  for (const auto& id : split.test) held.push_back(*by_id.at(id));

  trainer::TrainConfig config;
  config.toy = true;
  config.model = encoder::EncoderConfig::toy();
  config.model.dropout = 0.0;
  config.lr = 1e-2;
  config.batch_size = 8;
  config.max_steps = 200;
  config.eval_every = 0;
  const auto result = trainer::train_multitask(data, config);
  const auto [f_pos, f_neg] = trainer::mean_triplet_scores(result.last, held, labels, 200, 5);
  const double gap = f_pos - f_neg;

  trainer::MultitaskData frozen;
  frozen.labels = labels;
  frozen.train.assign(data.train.begin(), data.train.begin() + 8);
  auto overfit_config = config;
  overfit_config.lambda2 = 0.0;
  const auto overfit = trainer::train_multitask(frozen, overfit_config);
  const double j_cg = trainer::mean_name_loss(overfit.last, frozen.train, labels);

  char buf[200];
  std::snprintf(buf, sizeof buf, "held-out f_pos %.3f f_neg %.3f gap %.3f (need >= %.3f); 8-sample J_cg %.4f", f_pos,
                f_neg, gap, config.margin / 2.0, j_cg);
  return {gap >= config.margin / 2.0 && j_cg < 0.1, buf};
}

Outcome oov_proxy() {
  const auto pre = pipeline::LabelPreprocessor::load(kData / "name_corpus.txt", kData / "lexicon.tsv");
  const auto train = synthetic::synthetic_names(4000, 11);
  const auto test = synthetic::synthetic_names(2000, 12);
  std::set<std::string> whole_vocab;
  std::set<std::string> ens_vocab;
  for (const auto& n : train) {
    whole_vocab.insert(util::to_lower(n.raw));
    for (const auto& l : pre(n.raw)) ens_vocab.insert(l);
  }
  Labels whole_test;
  Labels ens_test;
  for (const auto& n : test) {
    whole_test.push_back(util::to_lower(n.raw));
    for (const auto& l : pre(n.raw)) ens_test.push_back(l);
  }
  const double whole = metrics::oov_ratio(whole_test, Labels(whole_vocab.begin(), whole_vocab.end()));
  const double ens = metrics::oov_ratio(ens_test, Labels(ens_vocab.begin(), ens_vocab.end()));
  const double reduction = whole > 0.0 ? 1.0 - ens / whole : 0.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "whole-name OOV %.4f, ensemble OOV %.4f, reduction %.1f%%", whole, ens,
                100.0 * reduction);
  return {reduction >= 0.5, buf};
}

Outcome split_hygiene() {
  std::mt19937_64 rng(505);
  int leaks = 0;
  int ratio_misses = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<ingest::FunctionRecord> records;
    const std::size_t sources = 10 + rng() % 41;
    std::map<std::string, std::string> source_of;
    for (std::size_t s = 0; s < sources; ++s) {
      for (std::size_t v = 1 + rng() % 4; v > 0; --v) {
        ingest::FunctionRecord r;
        r.id = "r" + std::to_string(records.size());
        r.source_id = "s" + std::to_string(s);
        r.name = "f";
        source_of[r.id] = r.source_id;
        records.push_back(r);
      }
    }
    for (const auto& fold : ingest::split_by_source(records, 5, rng())) {
      std::set<std::string> parts[3];
      const std::vector<std::string>* lists[3] = {&fold.train, &fold.valid, &fold.test};
      for (int p = 0; p < 3; ++p) {
        for (const auto& id : *lists[p]) parts[p].insert(source_of.at(id));
      }
      for (int a = 0; a < 3; ++a) {
        for (int b = a + 1; b < 3; ++b) {
          for (const auto& s : parts[a]) leaks += static_cast<int>(parts[b].count(s));
        }
      }
      const double expect[3] = {0.8, 0.1, 0.1};
      for (int p = 0; p < 3; ++p) {
        if (std::abs(static_cast<double>(parts[p].size()) - expect[p] * static_cast<double>(sources)) > 1.0) {
          ++ratio_misses;
        }
      }
      if (parts[0].size() + parts[1].size() + parts[2].size() != sources) ++ratio_misses;
    }
  }
  return {leaks == 0 && ratio_misses == 0,
          "100 datasets x 5 folds, leaked sources " + std::to_string(leaks) + ", ratio misses " +
              std::to_string(ratio_misses)};
}

Outcome determinism() {
  const auto dir = fs::temp_directory_path() / "epitome_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = std::string("\"") + EPITOME_CLI_PATH + "\"";
  const auto records = dir / "toy.jsonl";
  if (shell(cli + " synth --out \"" + records.string() + "\" > /dev/null") != 0) return {false, "synth failed"};
  for (const char* run : {"a", "b"}) {
    const std::string cmd = cli + " --seed 7 train --config \"" + (kData / "toy_train.cfg").string() + "\" --input \"" +
                            records.string() + "\" --out \"" + (dir / run).string() + "\" > \"" +
                            (dir / (std::string(run) + ".log")).string() + "\" 2>&1";
    if (shell(cmd) != 0) return {false, std::string("train run ") + run + " failed"};
  }
  const auto fa = files_under(dir / "a");
  const auto fb = files_under(dir / "b");
  if (fa != fb) return {false, "checkpoint file lists differ"};
  std::size_t params = 0;
  for (const auto& f : fa) {
    if (util::read_file(dir / "a" / f) != util::read_file(dir / "b" / f)) {
      return {false, "differs: " + f.string()};
    }
    if (f.filename() == "params.bin") ++params;
  }
  return {params > 0, std::to_string(fa.size()) + " files identical, " + std::to_string(params) + " params.bin"};
}

}  // namespace

int main() {
  criterion(1, "metrics exactness", 1.0, metrics_exactness);
  criterion(2, "tokenizer fidelity", 10.0, tokenizer_fidelity);
  criterion(3, "rule-based DP oracle", 30.0, rule_dp_oracle);
  criterion(4, "Smith-Waterman oracle", 10.0, smith_waterman_oracle);
  criterion(5, "gradient integrity", 7 * 60.0, gradient_integrity);
  criterion(6, "k-hop correctness", 30.0, khop_correctness);
  criterion(7, "conv node vectors", 5.0, conv_node_vectors);
  criterion(8, "multi-task training sanity", 300.0, multitask_sanity);
  criterion(9, "OOV reduction proxy", 30.0, oov_proxy);
  criterion(10, "split hygiene", 10.0, split_hygiene);
  criterion(11, "determinism", 600.0, determinism);
  std::printf("%s: %d of 11 criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
