#include "epitome/label_relations.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::relations {

// ---- stemming --------------------------------------------------------------------

namespace {

bool is_consonant(const std::string& w, std::size_t i) {
  switch (w[i]) {
    case 'a': case 'e': case 'i': case 'o': case 'u': return false;
    case 'y': return i == 0 || !is_consonant(w, i - 1);
    default: return true;
  }
}

// Porter's measure m of w[0..len): the number of VC sequences.
int measure(const std::string& w, std::size_t len) {
  int m = 0;
  std::size_t i = 0;
  while (i < len && is_consonant(w, i)) ++i;
  while (i < len) {
    while (i < len && !is_consonant(w, i)) ++i;
    if (i >= len) break;
    while (i < len && is_consonant(w, i)) ++i;
    ++m;
  }
  return m;
}

bool has_vowel(const std::string& w, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) {
    if (!is_consonant(w, i)) return true;
  }
  return false;
}

bool ends_with(const std::string& w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.compare(w.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool ends_double_consonant(const std::string& w) {
  const auto n = w.size();
  return n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1);
}

// *o: stem ends cvc where the final c is not w, x or y.
bool ends_cvc(const std::string& w) {
  const auto n = w.size();
  if (n < 3) return false;
  if (!is_consonant(w, n - 1) || is_consonant(w, n - 2) || !is_consonant(w, n - 3)) return false;
  const char c = w[n - 1];
  return c != 'w' && c != 'x' && c != 'y';
}

void step1a(std::string& w) {
  if (ends_with(w, "sses") || ends_with(w, "ies")) {
    w.resize(w.size() - 2);
  } else if (ends_with(w, "ss")) {
    // unchanged
  } else if (ends_with(w, "s") && w.size() > 3) {
    w.pop_back();
  }
}

void step1b(std::string& w) {
  bool cleanup = false;
  if (ends_with(w, "eed")) {
    if (measure(w, w.size() - 3) > 0) w.pop_back();
  } else if (ends_with(w, "ed") && has_vowel(w, w.size() - 2)) {
    w.resize(w.size() - 2);
    cleanup = true;
  } else if (ends_with(w, "ing") && has_vowel(w, w.size() - 3)) {
    w.resize(w.size() - 3);
    cleanup = true;
  }
  if (!cleanup) return;
  if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
    w.push_back('e');
  } else if (ends_double_consonant(w) && !ends_with(w, "l") && !ends_with(w, "s") && !ends_with(w, "z")) {
    w.pop_back();
  } else if (measure(w, w.size()) == 1 && ends_cvc(w)) {
    w.push_back('e');
  }
}

void step2(std::string& w) {
  static const std::pair<std::string_view, std::string_view> rules[] = {
      {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},   {"izer", "ize"},
      {"bli", "ble"},     {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},       {"ousli", "ous"},
      {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
      {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"}};
  for (const auto& [suffix, replacement] : rules) {
    if (!ends_with(w, suffix)) continue;
    const auto stem_len = w.size() - suffix.size();
    if (measure(w, stem_len) > 0) {
      w.resize(stem_len);
      w += replacement;
    }
    return;
  }
}

}  // namespace

std::string stem(std::string_view label) {
  std::string w = util::to_lower(label);
  if (w.size() <= 2) return w;
  step1a(w);
  step1b(w);
  step2(w);
  return w;
}

// ---- embeddings ----------------------------------------------------------------

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Corpus {
  std::vector<std::string> labels;
  std::unordered_map<std::string, std::size_t> vocab;
  std::vector<std::vector<std::size_t>> sentences;
  std::vector<double> counts;
};

Corpus index_corpus(const std::vector<std::vector<std::string>>& corpus) {
  Corpus c;
  for (const auto& sentence : corpus) {
    std::vector<std::size_t> ids;
    for (const auto& label : sentence) {
      if (label.empty()) continue;
      auto [it, fresh] = c.vocab.try_emplace(label, c.labels.size());
      if (fresh) {
        c.labels.push_back(label);
        c.counts.push_back(0.0);
      }
      c.counts[it->second] += 1.0;
      ids.push_back(it->second);
    }
    if (!ids.empty()) c.sentences.push_back(std::move(ids));
  }
  if (c.labels.empty()) throw Error("embedding corpus is empty");
  return c;
}

// Skip-gram with negative sampling over an arbitrary input representation:
// `input(center)` yields the rows that are averaged into the center vector.
template <typename InputRows>
std::vector<double> train_sgns(const Corpus& c, const EmbeddingConfig& cfg, Eigen::MatrixXd& in_rows,
                               Eigen::MatrixXd& out_vectors, InputRows&& input) {
  if (cfg.dim < 2) throw Error("embedding dimension must be >= 2");
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> weights(c.counts.size());
  std::transform(c.counts.begin(), c.counts.end(), weights.begin(), [](double x) { return std::pow(x, 0.75); });
  std::discrete_distribution<std::size_t> noise(weights.begin(), weights.end());

  std::size_t total_pairs = 0;
  for (const auto& s : c.sentences) total_pairs += s.size();
  const double total_steps = static_cast<double>(std::max<std::size_t>(1, total_pairs * cfg.epochs));
  double step = 0.0;

  std::vector<double> history;
  Eigen::VectorXd hidden(cfg.dim);
  Eigen::VectorXd grad_hidden(cfg.dim);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss = 0.0;
    std::size_t terms = 0;
    for (const auto& sentence : c.sentences) {
      for (std::size_t i = 0; i < sentence.size(); ++i) {
        const double lr = cfg.learning_rate * std::max(1e-4, 1.0 - step / total_steps);
        step += 1.0;
        const auto rows = input(sentence[i]);
        const std::size_t lo = i >= static_cast<std::size_t>(cfg.window) ? i - cfg.window : 0;
        const std::size_t hi = std::min(sentence.size() - 1, i + cfg.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          hidden.setZero();
          for (auto r : rows) hidden += in_rows.row(static_cast<Eigen::Index>(r)).transpose();
          hidden /= static_cast<double>(rows.size());
          grad_hidden.setZero();
          for (int s = 0; s <= cfg.negatives; ++s) {
            const std::size_t target = s == 0 ? sentence[j] : noise(rng);
            if (s > 0 && target == sentence[j]) continue;
            const double label = s == 0 ? 1.0 : 0.0;
            auto out = out_vectors.row(static_cast<Eigen::Index>(target));
            const double score = sigmoid(out.dot(hidden.transpose()));
            loss -= std::log(std::max(1e-12, label > 0 ? score : 1.0 - score));
            const double g = (label - score) * lr;
            grad_hidden += g * out.transpose();
            out += g * hidden.transpose();
          }
          ++terms;
          grad_hidden /= static_cast<double>(rows.size());
          for (auto r : rows) in_rows.row(static_cast<Eigen::Index>(r)) += grad_hidden.transpose();
        }
      }
    }
    history.push_back(terms ? loss / static_cast<double>(terms) : 0.0);
  }
  return history;
}

Eigen::MatrixXd uniform_init(Eigen::Index rows, int dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5 / dim, 0.5 / dim);
  Eigen::MatrixXd m(rows, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

std::vector<std::size_t> EmbeddingTable::subword_ids(std::string_view label) const {
  const std::string marked = "<" + std::string(label) + ">";
  std::vector<std::size_t> ids;
  const auto buckets = static_cast<std::size_t>(ngram_vectors.rows());
  for (int n = min_ngram; n <= max_ngram; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= marked.size(); ++i) {
      ids.push_back(util::fnv1a(std::string_view(marked).substr(i, n)) % buckets);
    }
  }
  return ids;
}

Eigen::VectorXd EmbeddingTable::vector(std::string_view label) const {
  auto it = vocab.find(std::string(label));
  if (it != vocab.end()) return vectors.row(static_cast<Eigen::Index>(it->second)).transpose();
  if (kind == EmbeddingKind::skipgram) throw Error("label '" + std::string(label) + "' is not in the vocabulary");
  const auto ids = subword_ids(label);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(ngram_vectors.cols());
  for (auto id : ids) v += ngram_vectors.row(static_cast<Eigen::Index>(id)).transpose();
  if (!ids.empty()) v /= static_cast<double>(ids.size());
  return v;
}

EmbeddingTable train_skipgram(const std::vector<std::vector<std::string>>& corpus,
                              const EmbeddingConfig& config) {
  const Corpus c = index_corpus(corpus);
  std::mt19937_64 init_rng(config.seed ^ 0x5eedULL);
  EmbeddingTable table;
  table.kind = EmbeddingKind::skipgram;
  table.labels = c.labels;
  table.vocab = c.vocab;
  Eigen::MatrixXd in = uniform_init(static_cast<Eigen::Index>(c.labels.size()), config.dim, init_rng);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.labels.size()), config.dim);
  table.epoch_loss = train_sgns(c, config, in, out, [](std::size_t id) { return std::vector<std::size_t>{id}; });
  table.vectors = std::move(in);
  return table;
}

EmbeddingTable train_subword_embeddings(const std::vector<std::vector<std::string>>& corpus,
                                        const EmbeddingConfig& config) {
  if (config.min_ngram < 1 || config.max_ngram < config.min_ngram) throw Error("invalid n-gram range");
  const Corpus c = index_corpus(corpus);
  std::mt19937_64 init_rng(config.seed ^ 0xfa57ULL);
  EmbeddingTable table;
  table.kind = EmbeddingKind::subword;
  table.labels = c.labels;
  table.vocab = c.vocab;
  table.min_ngram = config.min_ngram;
  table.max_ngram = config.max_ngram;
  const auto v = static_cast<Eigen::Index>(c.labels.size());
  const auto buckets = static_cast<Eigen::Index>(config.buckets);
  // Rows [0, v) are whole-word vectors, rows [v, v + buckets) are n-gram buckets.
  Eigen::MatrixXd in = uniform_init(v + buckets, config.dim, init_rng);
  table.ngram_vectors.resize(buckets, config.dim);  // sized for subword_ids()

  std::vector<std::vector<std::size_t>> rows(c.labels.size());
  for (std::size_t i = 0; i < c.labels.size(); ++i) {
    rows[i].push_back(i);
    for (auto id : table.subword_ids(c.labels[i])) rows[i].push_back(static_cast<std::size_t>(v) + id);
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(v, config.dim);
  table.epoch_loss = train_sgns(c, config, in, out, [&](std::size_t id) { return rows[id]; });

  table.word_vectors = in.topRows(v);
  table.ngram_vectors = in.bottomRows(buckets);
  table.vectors.resize(v, config.dim);
  for (Eigen::Index i = 0; i < v; ++i) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(config.dim);
    for (auto r : rows[static_cast<std::size_t>(i)]) acc += in.row(static_cast<Eigen::Index>(r));
    table.vectors.row(i) = acc / static_cast<double>(rows[static_cast<std::size_t>(i)].size());
  }
  return table;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

std::vector<std::string> nearest_neighbors(const EmbeddingTable& table, std::string_view label,
                                           std::size_t k) {
  const Eigen::VectorXd q = table.vector(label);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < table.labels.size(); ++i) {
    if (table.labels[i] == label) continue;
    scored.emplace_back(-cosine(q, table.vectors.row(static_cast<Eigen::Index>(i)).transpose()), i);
  }
  const auto take = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < take; ++i) out.push_back(table.labels[scored[i].second]);
  return out;
}

std::vector<std::string> candidate_set(std::string_view label, const EmbeddingTable& sg,
                                       const EmbeddingTable& sw, std::size_t k) {
  if (!sg.contains(label)) throw Error("label '" + std::string(label) + "' is unknown to the skip-gram table");
  auto out = nearest_neighbors(sg, label, k);
  auto more = nearest_neighbors(sw, label, k);
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

// ---- string relations ------------------------------------------------------------

int smith_waterman_score(std::string_view a, std::string_view b) {
  constexpr int kMatch = 1;
  constexpr int kMismatch = -1;
  constexpr int kGap = -1;
  std::vector<int> prev(b.size() + 1, 0);
  std::vector<int> cur(b.size() + 1, 0);
  int best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int diag = prev[j - 1] + (a[i - 1] == b[j - 1] ? kMatch : kMismatch);
      cur[j] = std::max({0, diag, prev[j] + kGap, cur[j - 1] + kGap});
      best = std::max(best, cur[j]);
    }
    std::swap(prev, cur);
  }
  return best;
}

double sw_relative_similarity(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) throw Error("Smith-Waterman similarity needs non-empty strings");
  return static_cast<double>(smith_waterman_score(a, b)) / static_cast<double>(std::min(a.size(), b.size()));
}

bool is_abbreviation(std::string_view t, std::string_view w) {
  if (t.empty() || w.empty() || t == w) return false;
  return t.substr(0, w.size()) == w || w.substr(0, t.size()) == t;
}

std::string_view to_string(RelationKind k) {
  switch (k) {
    case RelationKind::synonym: return "synonym";
    case RelationKind::abbreviation: return "abbreviation";
    case RelationKind::related: return "related";
    case RelationKind::none: return "none";
  }
  return "none";
}

RelationKind parse_relation_kind(std::string_view s) {
  if (s == "synonym") return RelationKind::synonym;
  if (s == "abbreviation") return RelationKind::abbreviation;
  if (s == "related") return RelationKind::related;
  if (s == "none") return RelationKind::none;
  throw Error("unknown relation kind '" + std::string(s) + "'");
}

void ExternalRelations::add(std::string a, std::string b) {
  if (b < a) std::swap(a, b);
  pairs_.emplace(std::move(a), std::move(b));
}

bool ExternalRelations::contains(std::string_view a, std::string_view b) const {
  std::string x(a);
  std::string y(b);
  if (y < x) std::swap(x, y);
  return pairs_.count({x, y}) != 0u;
}

ExternalRelations ExternalRelations::load(const std::filesystem::path& path) {
  ExternalRelations rel;
  std::size_t line_no = 0;
  for (const auto& raw : util::read_lines(path)) {
    ++line_no;
    const auto line = util::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto f = util::split(line, '\t');
    if (f.size() < 2 || f.size() > 3)
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected label_a<TAB>label_b[<TAB>kind]");
    rel.add(util::to_lower(util::trim(f[0])), util::to_lower(util::trim(f[1])));
  }
  return rel;
}

RelationKind classify_relation(std::string_view t, std::string_view c, const ExternalRelations* external) {
  if (sw_relative_similarity(t, c) >= kSynonymThreshold) return RelationKind::synonym;
  if (is_abbreviation(t, c)) return RelationKind::abbreviation;
  if (external != nullptr && external->contains(t, c)) return RelationKind::related;
  return RelationKind::none;
}

// ---- grouping -----------------------------------------------------------------------

std::string RelationLexicon::canonicalize(std::string_view label) const {
  auto it = canonical.find(std::string(label));
  return it == canonical.end() ? std::string(label) : it->second;
}

std::vector<std::string> RelationLexicon::canonicalize(const std::vector<std::string>& labels) const {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(canonicalize(l));
  return out;
}

void RelationLexicon::save(const std::filesystem::path& relations_path,
                           const std::filesystem::path& canonical_path) const {
  std::ofstream rel(relations_path);
  if (!rel) throw Error("cannot write " + relations_path.string());
  for (const auto& r : relations) rel << r.a << '\t' << r.b << '\t' << to_string(r.kind) << '\n';
  if (!canonical_path.empty()) {
    std::ofstream can(canonical_path);
    if (!can) throw Error("cannot write " + canonical_path.string());
    for (const auto& [label, canon] : canonical) can << label << '\t' << canon << '\n';
  }
}

RelationLexicon RelationLexicon::load_canonical(const std::filesystem::path& canonical_path) {
  RelationLexicon lex;
  std::size_t line_no = 0;
  for (const auto& line : util::read_lines(canonical_path)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    const auto cols = util::split(line, '\t');
    if (cols.size() != 2 || cols[0].empty() || cols[1].empty()) {
      throw Error(canonical_path.string() + ":" + std::to_string(line_no) + ": expected label<TAB>canonical");
    }
    lex.canonical[cols[0]] = cols[1];
  }
  return lex;
}

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

RelationLexicon build_relation_groups(const std::vector<std::string>& vocab_in, const EmbeddingTable* sg,
                                      const EmbeddingTable* sw, const GroupingOptions& options) {
  std::vector<std::string> vocab;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& label : vocab_in) {
    if (label.empty() || index.count(label) != 0u) continue;
    index.emplace(label, vocab.size());
    vocab.push_back(label);
  }
  RelationLexicon lex;
  if (vocab.empty()) return lex;

  UnionFind uf(vocab.size());
  std::map<std::string, std::size_t> by_stem;
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto [it, fresh] = by_stem.try_emplace(stem(vocab[i]), i);
    if (!fresh) uf.unite(it->second, i);
  }

  std::vector<std::pair<std::size_t, std::size_t>> prefix_edges;
  std::set<std::pair<std::string, std::string>> seen;
  if (sg != nullptr && sw != nullptr) {
    for (const auto& t : vocab) {
      if (!sg->contains(t)) continue;
      for (const auto& c : candidate_set(t, *sg, *sw, options.candidates_per_table)) {
        if (c == t || index.count(c) == 0u) continue;
        const auto key = t < c ? std::make_pair(t, c) : std::make_pair(c, t);
        if (!seen.insert(key).second) continue;
        if (options.deny != nullptr && options.deny->contains(t, c)) continue;
        const auto kind = classify_relation(t, c, options.external);
        if (kind == RelationKind::none) continue;
        lex.relations.push_back({t, c, kind});
        if (kind == RelationKind::synonym || kind == RelationKind::abbreviation) {
          uf.unite(index.at(t), index.at(c));
          if (is_abbreviation(t, c)) prefix_edges.emplace_back(index.at(t), index.at(c));
        }
      }
    }
  }

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < vocab.size(); ++i) groups[uf.find(i)].push_back(i);
  std::set<std::size_t> expanding;
  for (const auto& [a, b] : prefix_edges) expanding.insert(uf.find(a));

  for (const auto& [root, members] : groups) {
    const bool longest = expanding.count(root) != 0u;
    std::size_t pick = members.front();
    for (auto m : members) {
      const auto& cand = vocab[m];
      const auto& cur = vocab[pick];
      const bool better = longest ? (cand.size() > cur.size() || (cand.size() == cur.size() && cand < cur))
                                  : (cand.size() < cur.size() || (cand.size() == cur.size() && cand < cur));
      if (better) pick = m;
    }
    for (auto m : members) lex.canonical[vocab[m]] = vocab[pick];
  }
  return lex;
}

}  // namespace epitome::relations
