#include <doctest.h>

#include <cmath>
#include <random>

#include "epitome/error.hpp"
#include "epitome/label_relations.hpp"
#include "epitome/name_tokenizer.hpp"
#include "epitome/util.hpp"
#include "support.hpp"

using namespace epitome;
using namespace epitome::tokenizer;
using Labels = std::vector<std::string>;

namespace {

const TokenizerPipeline& bundled() {
  static const TokenizerPipeline p =
      TokenizerPipeline::load(testing::data_dir() / "name_corpus.txt", testing::data_dir() / "lexicon.tsv");
  return p;
}

RuleLexicon lexicon_of(std::initializer_list<const char*> words) {
  RuleLexicon lex;
  for (const auto* w : words) lex.add_word(w);
  return lex;
}

struct Segmentation {
  std::size_t covered = 0;
  std::size_t segments = 0;
  std::vector<std::size_t> cuts;
};

// Enumerates every cut set; segments must be lexicon entries or single characters.
Boundaries exhaustive_rule_oracle(const RuleLexicon& lex, const std::string& name) {
  const std::size_t n = name.size();
  bool have = false;
  Segmentation best;
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    Segmentation s;
    std::size_t start = 0;
    bool valid = true;
    for (std::size_t p = 1; p <= n; ++p) {
      if (p < n && (mask & (1u << (p - 1))) == 0u) continue;
      const auto seg = name.substr(start, p - start);
      const bool word = lex.contains(seg);
      if (!word && seg.size() != 1) {
        valid = false;
        break;
      }
      s.covered += word ? seg.size() : 0;
      ++s.segments;
      if (p < n) s.cuts.push_back(p);
      start = p;
    }
    if (!valid) continue;
    const bool better = !have || s.covered > best.covered ||
                        (s.covered == best.covered &&
                         (s.segments < best.segments || (s.segments == best.segments && s.cuts < best.cuts)));
    if (better) {
      best = s;
      have = true;
    }
  }
  return Boundaries(best.cuts.begin(), best.cuts.end());
}

Labels preprocess(const std::string& name) {
  auto labels = expand_abbreviations(tokenize_name(bundled(), name).labels, bundled().lexicon);
  for (auto& l : labels) l = relations::stem(l);
  return labels;
}

}  // namespace

TEST_CASE("split_by_convention") {
  CHECK(split_by_convention("getTableSize") == Labels{"get", "table", "size"});
  CHECK(split_by_convention("set_rand") == Labels{"set", "rand"});
  CHECK(split_by_convention("x2realloc") == Labels{"x", "2", "realloc"});
  CHECK(split_by_convention("").empty());
  CHECK(split_by_convention("__init__") == Labels{"init"});
  CHECK(split_by_convention("HTTPServer") == (Labels{"http", "server"}));
  CHECK(split_by_convention("name2oid") == Labels{"name", "2", "oid"});
}

TEST_CASE("apply_boundaries") {
  CHECK(apply_boundaries("timeset", {4}) == Labels{"time", "set"});
  CHECK(apply_boundaries("abc", {}) == Labels{"abc"});
}

TEST_CASE("train_tf_model counts") {
  const auto m = train_tf_model({"ab"}, 2);
  CHECK(m.ngram_counts.size() == 3);
  CHECK(m.ngram_counts.at("a") == 1);
  CHECK(m.ngram_counts.at("b") == 1);
  CHECK(m.ngram_counts.at("ab") == 1);
  CHECK(m.forward_tf.at("a").at('b') == 1);
  CHECK(m.backward_tf.at("b").at('a') == 1);
  CHECK(train_tf_model({""}, 3).empty());
  const auto aa = train_tf_model({"aa"}, 2);
  CHECK(aa.ngram_counts.size() == 2);
  CHECK(aa.ngram_counts.at("a") == 2);
  CHECK(aa.ngram_counts.at("aa") == 1);
  CHECK_THROWS_AS(train_tf_model({"ab"}, 0), Error);
  for (const auto& [k, v] : m.forward_tf) CHECK(m.ngram_counts.count(k) == 1);
}

TEST_CASE("tf_tokenize") {
  const std::vector<std::string> words = {"set", "get", "put"};
  std::vector<std::string> corpus;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int i = 0; i < 50; ++i) corpus.push_back(words[pick(rng)] + words[pick(rng)]);
  const auto m = train_tf_model(corpus, 5);
  CHECK(tf_tokenize(m, "setget").count(3) == 1);
  CHECK(tf_tokenize(m, "s").empty());
  CHECK(tf_tokenize(m, "zzqq").empty());
}

TEST_CASE("train_unigram") {
  const auto m = train_unigram({{"set", "time"}, {"set"}});
  CHECK(m.probability("set") == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(m.probability("time") == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(m.max_label_len == 4);
  CHECK(train_unigram({{"only"}}).probability("only") == doctest::Approx(1.0));
  CHECK_THROWS_AS(train_unigram({}), Error);
  const auto big = train_unigram({{"a", "b", "c"}, {"a", "d"}, {"e"}});
  double total = 0.0;
  for (const auto& [l, p] : big.label_probs) {
    CHECK(p > 0.0);
    total += p;
  }
  CHECK(std::abs(total - 1.0) < 1e-9);
}

TEST_CASE("unigram_tokenize forward maximum match") {
  CHECK(unigram_tokenize(train_unigram({{"set", "time"}}), "settime") == Boundaries{3});
  CHECK(unigram_tokenize(train_unigram({{"times", "set"}}), "timeset") == Boundaries{5, 6});
  CHECK(unigram_tokenize(train_unigram({{"settime"}}), "settime").empty());
}

TEST_CASE("rule_tokenize examples") {
  const auto lex = lexicon_of({"time", "times", "set"});
  CHECK(apply_boundaries("timeset", rule_tokenize(lex, "timeset")) == Labels{"time", "set"});
  CHECK(apply_boundaries("resolvebuiltin", rule_tokenize(lexicon_of({"resolve", "builtin"}), "resolvebuiltin")) ==
        Labels{"resolve", "builtin"});
  CHECK(rule_tokenize(lex, "times").empty());
  CHECK(apply_boundaries("timeset", rule_tokenize(bundled().lexicon, "timeset")) == Labels{"time", "set"});
}

TEST_CASE("rule_tokenize equals exhaustive enumeration") {
  const std::vector<std::string> words = {"a",   "ab",   "abc", "b",    "ba",   "cab", "bca", "ca",   "ac",  "cc",
                                          "abca", "bb",  "cba", "aca",  "bac",  "abb", "ccc", "acab", "bcb", "aab"};
  RuleLexicon lex;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i % 5 == 4) lex.add_abbreviation(words[i], words[i] + "x");
    else lex.add_word(words[i]);
  }
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<int> ch(0, 3);
  int mismatches = 0;
  for (int t = 0; t < 500; ++t) {
    std::string name;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) name += "abcd"[ch(rng)];
    if (rule_tokenize(lex, name) != exhaustive_rule_oracle(lex, name)) ++mismatches;
  }
  CHECK(mismatches == 0);
}

TEST_CASE("vote rules") {
  CHECK(vote({3}, {3}, {3, 7}) == Boundaries{3, 7});
  CHECK(vote({}, {}, {}).empty());
  const auto d = vote_detail({2}, {5}, {7});
  CHECK(d.final_list.empty());
  CHECK(d.pending == Voter::rule);
  CHECK(d.result == Boundaries{7});
  CHECK(vote_detail({3}, {3, 9}, {5}).pending == Voter::unigram);
}

TEST_CASE("vote output is drawn from the three lists") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> pos(1, 15);
  for (int t = 0; t < 300; ++t) {
    Boundaries lists[3];
    for (auto& l : lists) {
      for (int i = 0; i < 4; ++i) {
        if (rng() % 2) l.insert(pos(rng));
      }
    }
    for (const auto p : vote(lists[0], lists[1], lists[2])) {
      CHECK((lists[0].count(p) + lists[1].count(p) + lists[2].count(p)) > 0);
    }
  }
}

TEST_CASE("RuleLexicon") {
  auto lex = lexicon_of({"message"});
  lex.add_abbreviation("msg", "message");
  CHECK(lex.contains("msg"));
  CHECK(lex.contains("message"));
  CHECK_FALSE(lex.contains("mess"));
  CHECK_THROWS_AS(lex.add_abbreviation("", "x"), Error);
  CHECK_THROWS_AS(lex.add_abbreviation("longer", "short"), Error);
  const auto dir = testing::temp_dir("lexicon");
  util::write_file(dir / "lex.tsv", "# comment\nget\n\nmsg\tmessage\n");
  const auto loaded = RuleLexicon::load(dir / "lex.tsv");
  CHECK(loaded.words.count("get") == 1);
  CHECK(loaded.abbreviations.at("msg") == "message");
  util::write_file(dir / "bad.tsv", "a\tb\tc\n");
  CHECK_THROWS_AS(RuleLexicon::load(dir / "bad.tsv"), Error);
}

TEST_CASE("expand_abbreviations") {
  RuleLexicon lex;
  lex.add_abbreviation("msg", "message");
  lex.add_abbreviation("lst", "list");
  CHECK(expand_abbreviations({"msg", "send"}, lex) == Labels{"message", "send"});
  CHECK(expand_abbreviations({"lst"}, lex) == Labels{"list"});
  CHECK(expand_abbreviations({"hello"}, lex) == Labels{"hello"});
  CHECK(expand_abbreviations({"msg", "send"}, bundled().lexicon) == Labels{"message", "send"});
}

TEST_CASE("tokenize_name on the bundled models") {
  CHECK(tokenize_name(bundled(), "zipfileNext").labels == Labels{"zip", "file", "next"});
  CHECK(tokenize_name(bundled(), "typenameTypeMod").labels == Labels{"type", "name", "type", "mod"});
  CHECK(tokenize_name(bundled(), "atexit").labels == Labels{"at", "exit"});
  CHECK_THROWS_AS(tokenize_name(bundled(), ""), Error);
  CHECK_THROWS_AS(tokenize_name(bundled(), "___"), Error);
}

TEST_CASE("published tokenization rows with expansion and stemming") {
  CHECK(preprocess("test nofork sideeffects") == Labels{"test", "no", "fork", "side", "effect"});
  CHECK(preprocess("typenameTypeMod") == Labels{"type", "name", "type", "mod"});
  CHECK(preprocess("nomoreargs") == Labels{"no", "more", "arg", "s"});
  CHECK(preprocess("resolvebuiltin") == Labels{"resolve", "builtin"});
  CHECK(preprocess("scanpmwidgets") == Labels{"scan", "pm", "widget"});
  CHECK(preprocess("zipfileNext") == Labels{"zip", "file", "next"});
}

TEST_CASE("tokenize_name invariants") {
  const Labels names = {"getTableSize", "x2realloc", "sendmsg", "timeset", "readFileBuffer", "p11_attrs_match",
                        "nomoreargs",   "a",         "ABC",     "do_it2",  "scanpmwidgets"};
  for (const auto& n : names) {
    const auto r = tokenize_name(bundled(), n);
    CHECK(util::join(r.labels, "") == r.stripped);
    for (const auto& l : r.labels) CHECK_FALSE(l.empty());
    for (const auto p : r.final_boundaries) {
      CHECK(p > 0);
      CHECK(p < r.stripped.size());
    }
  }
}
