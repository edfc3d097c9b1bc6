#include "epitome/name_tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <limits>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::tokenizer {

namespace {

bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

bool is_digit_run(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), is_digit);
}

}  // namespace

std::vector<std::string> split_by_convention(std::string_view name) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(util::to_lower(current));
    current.clear();
  };
  for (std::size_t i = 0; i < name.size(); ++i) {
    const char c = name[i];
    if (!is_alpha(c) && !is_digit(c)) {
      flush();
      continue;
    }
    if (!current.empty()) {
      const char prev = current.back();
      const bool lower_to_upper = (is_lower(prev) || is_digit(prev)) && is_upper(c);
      // "HTTPServer": the last capital of an acronym run starts the next word.
      const bool acronym_end =
          is_upper(prev) && is_upper(c) && i + 1 < name.size() && is_lower(name[i + 1]);
      const bool alpha_digit = is_digit(prev) != is_digit(c);
      if (lower_to_upper || acronym_end || alpha_digit) flush();
    }
    current.push_back(c);
  }
  flush();
  return out;
}

std::vector<std::string> apply_boundaries(std::string_view s, const Boundaries& cuts) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (auto p : cuts) {
    if (p <= start || p >= s.size()) continue;
    out.emplace_back(s.substr(start, p - start));
    start = p;
  }
  if (start < s.size()) out.emplace_back(s.substr(start));
  return out;
}

// ---- TF --------------------------------------------------------------------

TfModel train_tf_model(const std::vector<std::string>& corpus, std::size_t max_n) {
  if (max_n < 1) throw Error("max_n must be >= 1");
  TfModel model;
  model.max_n = max_n;
  for (const auto& s : corpus) {
    const std::size_t len = s.size();
    for (std::size_t i = 0; i < len; ++i) {
      for (std::size_t n = 1; n <= max_n && i + n <= len; ++n) {
        std::string gram = s.substr(i, n);
        ++model.ngram_counts[gram];
        if (i + n < len) ++model.forward_tf[gram][s[i + n]];
        if (i > 0) ++model.backward_tf[gram][s[i - 1]];
      }
    }
  }
  return model;
}

namespace {

// Distinct successors of the longest known n-gram ending at p.
std::size_t forward_freedom(const TfModel& m, std::string_view name, std::size_t p) {
  for (std::size_t n = std::min(m.max_n, p); n >= 1; --n) {
    const std::string gram(name.substr(p - n, n));
    if (m.ngram_counts.count(gram) == 0u) continue;
    auto it = m.forward_tf.find(gram);
    return it == m.forward_tf.end() ? 0 : it->second.size();
  }
  return 0;
}

// Distinct predecessors of the longest known n-gram starting at p.
std::size_t backward_freedom(const TfModel& m, std::string_view name, std::size_t p) {
  for (std::size_t n = std::min(m.max_n, name.size() - p); n >= 1; --n) {
    const std::string gram(name.substr(p, n));
    if (m.ngram_counts.count(gram) == 0u) continue;
    auto it = m.backward_tf.find(gram);
    return it == m.backward_tf.end() ? 0 : it->second.size();
  }
  return 0;
}

bool lexicon_match(const TfModel& m, std::string_view name, std::size_t p) {
  const bool prefix = p >= 2 && m.ngram_counts.count(std::string(name.substr(0, p))) != 0u;
  const bool suffix = name.size() - p >= 2 && m.ngram_counts.count(std::string(name.substr(p))) != 0u;
  return prefix || suffix;
}

void emit_peaks(const std::vector<double>& delta, double threshold, Boundaries& out) {
  double peak = 0.0;
  for (double d : delta) peak = std::max(peak, d);
  if (peak <= 0.0) return;
  for (std::size_t p = 0; p < delta.size(); ++p) {
    if (delta[p] > 0.0 && delta[p] >= threshold * peak) out.insert(p);
  }
}

}  // namespace

Boundaries tf_tokenize(const TfModel& model, std::string_view name, double threshold) {
  Boundaries out;
  const std::size_t len = name.size();
  if (len < 3 || model.empty()) return out;

  std::vector<std::size_t> fwd(len, 0);
  std::vector<std::size_t> bwd(len, 0);
  for (std::size_t p = 1; p < len; ++p) {
    fwd[p] = forward_freedom(model, name, p);
    bwd[p] = backward_freedom(model, name, p);
  }

  std::vector<double> delta_f(len, 0.0);
  std::vector<double> delta_b(len, 0.0);
  for (std::size_t p = 2; p < len; ++p) {
    delta_f[p] = static_cast<double>(fwd[p]) - static_cast<double>(fwd[p - 1]);
  }
  for (std::size_t p = 1; p + 1 < len; ++p) {
    delta_b[p] = static_cast<double>(bwd[p]) - static_cast<double>(bwd[p + 1]);
  }
  for (std::size_t p = 1; p < len; ++p) {
    if (lexicon_match(model, name, p)) {
      delta_f[p] *= 2.0;
      delta_b[p] *= 2.0;
    }
  }
  emit_peaks(delta_f, threshold, out);
  emit_peaks(delta_b, threshold, out);
  return out;
}

// ---- unigram ---------------------------------------------------------------

double UnigramModel::probability(std::string_view label) const {
  auto it = label_probs.find(std::string(label));
  return it == label_probs.end() ? 0.0 : it->second;
}

UnigramModel train_unigram(const std::vector<std::vector<std::string>>& corpus) {
  std::map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& name : corpus) {
    for (const auto& label : name) {
      if (label.empty()) continue;
      ++counts[label];
      ++total;
    }
  }
  if (counts.empty()) throw Error("unigram corpus is empty");
  UnigramModel model;
  const double denom = static_cast<double>(total + counts.size());
  for (const auto& [label, c] : counts) {
    model.label_probs[label] = static_cast<double>(c + 1) / denom;
    model.max_label_len = std::max(model.max_label_len, label.size());
  }
  return model;
}

Boundaries unigram_tokenize(const UnigramModel& model, std::string_view name) {
  Boundaries out;
  std::size_t cursor = 0;
  while (cursor < name.size()) {
    std::size_t take = 1;
    const std::size_t longest = std::min(model.max_label_len, name.size() - cursor);
    for (std::size_t len = longest; len >= 1; --len) {
      if (model.label_probs.count(std::string(name.substr(cursor, len))) != 0u) {
        take = len;
        break;
      }
    }
    cursor += take;
    if (cursor < name.size()) out.insert(cursor);
  }
  return out;
}

// ---- rule DP ----------------------------------------------------------------

void RuleLexicon::add_word(std::string word) {
  word = util::to_lower(word);
  if (word.empty()) return;
  max_len_ = std::max(max_len_, word.size());
  words.insert(std::move(word));
}

void RuleLexicon::add_abbreviation(std::string short_form, std::string full_form) {
  short_form = util::to_lower(short_form);
  full_form = util::to_lower(full_form);
  if (short_form.empty()) throw Error("abbreviation key is empty");
  if (short_form.size() > full_form.size())
    throw Error("abbreviation '" + short_form + "' is longer than its expansion '" + full_form + "'");
  max_len_ = std::max(max_len_, short_form.size());
  abbreviations[short_form] = std::move(full_form);
}

bool RuleLexicon::contains(std::string_view s) const {
  const std::string key(s);
  return words.count(key) != 0u || abbreviations.count(key) != 0u;
}

RuleLexicon RuleLexicon::load(const std::filesystem::path& path) {
  RuleLexicon lex;
  std::size_t line_no = 0;
  for (const auto& raw : util::read_lines(path)) {
    ++line_no;
    const auto line = util::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto fields = util::split(line, '\t');
    if (fields.size() == 1) {
      lex.add_word(std::string(util::trim(fields[0])));
    } else if (fields.size() == 2) {
      lex.add_abbreviation(std::string(util::trim(fields[0])), std::string(util::trim(fields[1])));
    } else {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected 1 or 2 tab-separated fields");
    }
  }
  return lex;
}

Boundaries rule_tokenize(const RuleLexicon& lexicon, std::string_view name) {
  const std::size_t n = name.size();
  if (n == 0) return {};
  struct Best {
    std::size_t covered = 0;
    std::size_t segments = 0;
    std::vector<std::size_t> cuts;
  };
  // best[i] is the optimal segmentation of name[i..n).
  std::vector<Best> best(n + 1);
  const std::size_t longest = std::max<std::size_t>(1, lexicon.max_entry_length());
  for (std::size_t i = n; i-- > 0;) {
    bool have = false;
    Best chosen;
    for (std::size_t j = i + 1; j <= std::min(n, i + longest); ++j) {
      const bool word = lexicon.contains(name.substr(i, j - i));
      if (!word && j != i + 1) continue;
      Best cand;
      cand.covered = best[j].covered + (word ? j - i : 0);
      cand.segments = best[j].segments + 1;
      if (j < n) cand.cuts.push_back(j);
      cand.cuts.insert(cand.cuts.end(), best[j].cuts.begin(), best[j].cuts.end());
      const bool better = !have || cand.covered > chosen.covered ||
                          (cand.covered == chosen.covered &&
                           (cand.segments < chosen.segments ||
                            (cand.segments == chosen.segments && cand.cuts < chosen.cuts)));
      if (better) {
        chosen = std::move(cand);
        have = true;
      }
    }
    best[i] = std::move(chosen);
  }
  return Boundaries(best[0].cuts.begin(), best[0].cuts.end());
}

// ---- voting -------------------------------------------------------------------

VoteDetail vote_detail(const Boundaries& b_tf, const Boundaries& b_uni, const Boundaries& b_rule) {
  VoteDetail out;
  std::map<std::size_t, int> votes;
  for (const auto* list : {&b_tf, &b_uni, &b_rule}) {
    for (auto p : *list) ++votes[p];
  }
  for (const auto& [p, v] : votes) {
    if (v >= 2) out.final_list.insert(p);
  }

  auto overlap = [&](const Boundaries& list) {
    return std::count_if(list.begin(), list.end(), [&](std::size_t p) { return out.final_list.count(p) != 0u; });
  };
  // Tie-break order: rule, unigram, tf.
  const std::array<std::pair<Voter, const Boundaries*>, 3> order = {
      {{Voter::rule, &b_rule}, {Voter::unigram, &b_uni}, {Voter::tf, &b_tf}}};
  long best = -1;
  const Boundaries* pending = &b_rule;
  for (const auto& [who, list] : order) {
    const long o = overlap(*list);
    if (o > best) {
      best = o;
      out.pending = who;
      pending = list;
    }
  }

  out.result = out.final_list;
  for (auto p : *pending) {
    if (out.final_list.count(p) != 0u) continue;
    // A pending-only cut one character away from a voted cut would carve a
    // single-character fragment out of a majority label.
    const bool adjacent = out.final_list.count(p + 1) != 0u || (p > 0 && out.final_list.count(p - 1) != 0u);
    if (!adjacent) out.result.insert(p);
  }
  return out;
}

Boundaries vote(const Boundaries& b_tf, const Boundaries& b_uni, const Boundaries& b_rule) {
  return vote_detail(b_tf, b_uni, b_rule).result;
}

// ---- pipeline ------------------------------------------------------------------

TokenizerPipeline TokenizerPipeline::build(const std::vector<std::string>& corpus_lines,
                                           RuleLexicon lexicon, std::size_t max_n) {
  std::vector<std::vector<std::string>> tokenized;
  std::vector<std::string> joined;
  for (const auto& line : corpus_lines) {
    auto tokens = util::split_whitespace(line);
    if (tokens.empty()) continue;
    for (auto& t : tokens) t = util::to_lower(t);
    joined.push_back(util::join(tokens, ""));
    tokenized.push_back(std::move(tokens));
  }
  TokenizerPipeline p;
  p.unigram = train_unigram(tokenized);
  p.tf = train_tf_model(joined, max_n);
  p.lexicon = std::move(lexicon);
  return p;
}

TokenizerPipeline TokenizerPipeline::load(const std::filesystem::path& corpus,
                                          const std::filesystem::path& lexicon, std::size_t max_n) {
  return build(util::read_lines(corpus), RuleLexicon::load(lexicon), max_n);
}

TokenizationResult tokenize_name(const TokenizerPipeline& pipeline, std::string_view name) {
  if (util::trim(name).empty()) throw Error("cannot tokenize an empty name");
  TokenizationResult res;
  res.name = std::string(name);
  const auto segments = split_by_convention(name);
  if (segments.empty()) throw Error("name '" + std::string(name) + "' has no alphanumeric content");

  std::size_t offset = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (s > 0) {
      for (auto* b : {&res.boundaries_tf, &res.boundaries_unigram, &res.boundaries_rule, &res.final_boundaries})
        b->insert(offset);
    }
    const bool suspect =
        seg.size() >= kSuspectMinLength && !is_digit_run(seg) && !pipeline.lexicon.contains(seg);
    if (suspect) {
      const auto b_tf = tf_tokenize(pipeline.tf, seg);
      const auto b_uni = unigram_tokenize(pipeline.unigram, seg);
      const auto b_rule = rule_tokenize(pipeline.lexicon, seg);
      const auto voted = vote(b_tf, b_uni, b_rule);
      for (auto p : b_tf) res.boundaries_tf.insert(offset + p);
      for (auto p : b_uni) res.boundaries_unigram.insert(offset + p);
      for (auto p : b_rule) res.boundaries_rule.insert(offset + p);
      for (auto p : voted) res.final_boundaries.insert(offset + p);
    }
    res.stripped += seg;
    offset += seg.size();
  }
  res.labels = apply_boundaries(res.stripped, res.final_boundaries);
  return res;
}

std::vector<std::string> expand_abbreviations(const std::vector<std::string>& labels,
                                              const RuleLexicon& lexicon) {
  std::vector<std::string> out;
  out.reserve(labels.size());
  for (const auto& label : labels) {
    auto it = lexicon.abbreviations.find(label);
    out.push_back(it == lexicon.abbreviations.end() ? label : it->second);
  }
  return out;
}

}  // namespace epitome::tokenizer
