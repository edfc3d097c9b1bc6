#include "epitome/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::synthetic {

namespace {

using ingest::Instruction;
using ingest::OptLevel;

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  do {
    out.insert(out.begin(), digits[v & 0xf]);
    v >>= 4;
  } while (v != 0);
  return "0x" + out;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

const std::vector<std::string> kVerbs = {"get", "set", "read", "write", "parse", "init",
                                         "free", "find", "copy", "send", "check", "update"};
const std::vector<std::string> kNouns = {"table", "buffer", "config", "file",   "node",   "list",
                                         "string", "socket", "message", "key", "header", "path"};

const std::vector<std::string> kRegs = {"eax", "ebx", "ecx", "edx", "esi", "edi"};
const std::vector<std::string> kAlu = {"add", "sub", "xor", "and", "or", "shl", "shr", "imul", "lea", "movzx", "mov", "test"};

struct Inst {
  std::string mnemonic;
  std::vector<std::string> operands;
};

std::string random_operand(std::mt19937_64& rng) {
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0:
      return std::to_string(std::uniform_int_distribution<int>(1, 64)(rng));
    case 1:
      return "[" + pick(kRegs, rng) + "+" + hex(std::uniform_int_distribution<int>(1, 15)(rng) * 4) + "]";
    case 2:
      return hex(std::uniform_int_distribution<std::uint64_t>(0x1000, 0xfffff)(rng));
    default:
      return pick(kRegs, rng);
  }
}

Inst random_inst(std::mt19937_64& rng) {
  Inst i;
  i.mnemonic = pick(kAlu, rng);
  i.operands = {pick(kRegs, rng), random_operand(rng)};
  return i;
}

// Three instructions characteristic of a word, identical wherever the word appears.
std::vector<Inst> motif(const std::string& word) {
  std::mt19937_64 rng(util::fnv1a("motif:" + word));
  std::vector<Inst> out;
  for (int k = 0; k < 3; ++k) out.push_back(random_inst(rng));
  if (std::uniform_int_distribution<int>(0, 1)(rng) == 1) out[1] = {"call", {hex(0x401000 + util::fnv1a(word) % 0x10000)}};
  return out;
}

struct Body {
  std::vector<Inst> head;
  std::vector<Inst> loop;
  std::vector<Inst> tail;
  int loop_bound = 8;
};

Body make_body(const std::string& verb, const std::string& noun, std::mt19937_64& rng) {
  Body b;
  b.head = motif(verb);
  const int fa = std::uniform_int_distribution<int>(2, 4)(rng);
  for (int i = 0; i < fa; ++i) b.head.push_back(random_inst(rng));
  b.loop = motif(noun);
  const int fb = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int i = 0; i < fb; ++i) b.loop.push_back(random_inst(rng));
  const int fc = std::uniform_int_distribution<int>(1, 2)(rng);
  for (int i = 0; i < fc; ++i) b.tail.push_back(random_inst(rng));
  b.loop_bound = std::uniform_int_distribution<int>(2, 32)(rng);
  return b;
}

bool writes_register(const Inst& i) {
  return !i.operands.empty() && i.mnemonic != "test" && i.mnemonic != "call" &&
         std::find(kRegs.begin(), kRegs.end(), i.operands[0]) != kRegs.end();
}

std::vector<Inst> spill(const std::vector<Inst>& in, std::mt19937_64& rng) {
  std::vector<Inst> out;
  for (const auto& i : in) {
    out.push_back(i);
    if (writes_register(i) && std::uniform_int_distribution<int>(0, 1)(rng) == 1) {
      out.push_back({"mov", {"[ebp-" + hex(4 * std::uniform_int_distribution<int>(1, 6)(rng)) + "]", i.operands[0]}});
    }
  }
  return out;
}

std::vector<Inst> strength_reduce(std::vector<Inst> in) {
  for (auto& i : in) {
    if (i.mnemonic == "imul" && i.operands.size() == 2 && i.operands[1] == "2") i = {"add", {i.operands[0], i.operands[0]}};
    if (i.mnemonic == "mov" && i.operands.size() == 2 && i.operands[1] == "0") i = {"xor", {i.operands[0], i.operands[0]}};
  }
  return in;
}

ingest::FunctionRecord assemble(const Body& base, OptLevel opt, ingest::Arch arch, std::mt19937_64& rng) {
  Body b = base;
  const bool frame = opt == OptLevel::O0 || opt == OptLevel::O1 || opt == OptLevel::unknown;
  if (opt == OptLevel::O0) {
    b.head = spill(b.head, rng);
    b.loop = spill(b.loop, rng);
  }
  if (opt == OptLevel::O2 || opt == OptLevel::O3 || opt == OptLevel::Os) {
    b.head = strength_reduce(b.head);
    b.loop = strength_reduce(b.loop);
  }
  if (opt == OptLevel::O3) {
    const auto once = b.loop;
    b.loop.insert(b.loop.end(), once.begin(), once.end());
  }

  ingest::FunctionRecord rec;
  rec.arch = arch;
  rec.opt = opt;
  auto emit = [&](const Inst& i, int block) {
    Instruction inst;
    inst.index = rec.instructions.size();
    inst.mnemonic = i.mnemonic;
    inst.operands = i.operands;
    inst.block_id = block;
    rec.instructions.push_back(std::move(inst));
  };
  if (frame) {
    emit({"push", {"ebp"}}, 0);
    emit({"mov", {"ebp", "esp"}}, 0);
  }
  for (const auto& i : b.head) emit(i, 0);
  emit({"xor", {"ecx", "ecx"}}, 0);
  const std::size_t loop_start = rec.instructions.size();
  for (const auto& i : b.loop) emit(i, 1);
  emit({"inc", {"ecx"}}, 1);
  emit({"cmp", {"ecx", std::to_string(b.loop_bound)}}, 1);
  emit({"jne", {hex(0x401000 + loop_start * 4)}}, 1);
  const std::size_t jump_at = rec.instructions.size() - 1;
  for (const auto& i : b.tail) emit(i, 2);
  if (frame) emit({"pop", {"ebp"}}, 2);
  emit({"ret", {}}, 2);
  rec.edges.push_back({jump_at, loop_start, ingest::EdgeKind::jump});
  return rec;
}

}  // namespace

const std::vector<std::string>& words() {
  static const std::vector<std::string> kWords = {
      // verbs
      "get", "set", "put", "read", "write", "open", "close", "init", "free", "alloc", "malloc", "realloc", "copy", "move", "find",
      "search", "parse", "print", "format", "load", "save", "store", "update", "delete", "remove", "insert",
      "add", "append", "create", "destroy", "build", "make", "check", "verify", "validate", "handle", "process",
      "run", "start", "stop", "reset", "clear", "flush", "send", "receive", "connect", "accept", "bind", "listen",
      "match", "compare", "sort", "merge", "split", "join", "trim", "strip", "encode", "decode", "encrypt",
      "decrypt", "compress", "fork", "scan", "resolve", "test", "exit", "lock", "unlock", "register", "dispatch",
      "emit", "fetch", "poll", "wait", "notify", "render", "draw", "convert", "apply", "allocate", "release",
      "attach", "detach", "enable", "disable", "show", "hide", "select", "filter", "count", "sign",
      // nouns
      "table", "buffer", "string", "list", "map", "hash", "key", "value", "node", "tree", "graph", "queue",
      "stack", "array", "size", "length", "index", "data", "block", "chunk", "page", "cache", "mutex", "thread",
      "task", "job", "event", "signal", "timer", "clock", "date", "time", "config", "option", "param", "attr",
      "attrs", "flag", "mode", "state", "status", "error", "warn", "log", "debug", "info", "message", "path",
      "directory", "file", "stream", "input", "output", "line", "char", "byte", "bit", "word", "number", "entry",
      "item", "element", "user", "group", "host", "port", "address", "request", "response", "header", "body",
      "client", "server", "session", "context", "handler", "callback", "object", "class", "method", "function",
      "result", "image", "color", "pixel", "font", "text", "window", "view", "point", "socket", "packet",
      "frame", "device", "driver", "module", "mod", "type", "name", "widget", "widgets", "effect", "effects",
      "side", "arg", "builtin", "zip", "pm", "memory", "region", "record", "field", "column", "row", "cursor",
      "token", "symbol", "scope", "shell", "command", "script", "query", "schema", "format", "version",
      "checksum", "digest", "cipher", "vector", "matrix", "pointer", "handle", "resource", "pool", "heap",
      // modifiers and function words
      "no", "more", "next", "prev", "first", "last", "new", "old", "raw", "base", "root", "child", "parent",
      "current", "default", "global", "local", "temp", "all", "any", "is", "has", "can", "at", "to", "from",
      "by", "of", "in", "out", "on", "off", "up", "down", "times", "max", "min", "total", "empty", "full",
      "valid", "dirty", "async", "sync", "fast", "safe"};
  static const std::vector<std::string> unique = [] {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& w : kWords) {
      if (seen.insert(w).second) out.push_back(w);
    }
    return out;
  }();
  return unique;
}

const std::vector<std::pair<std::string, std::string>>& abbreviations() {
  static const std::vector<std::pair<std::string, std::string>> kAbbrev = {
      {"msg", "message"}, {"lst", "list"},     {"buf", "buffer"},   {"cfg", "config"},   {"ctx", "context"},
      {"str", "string"},  {"num", "number"},   {"len", "length"},   {"idx", "index"},    {"ptr", "pointer"},
      {"tmp", "temp"},    {"addr", "address"}, {"dst", "destination"}, {"src", "source"}, {"cnt", "count"},
      {"val", "value"},   {"err", "error"},    {"req", "request"},  {"resp", "response"}, {"mgr", "manager"},
      {"dir", "directory"}, {"opt", "option"}, {"ver", "version"}, {"sym", "symbol"}, {"cmd", "command"}};
  return kAbbrev;
}

std::string render_name(const std::vector<std::string>& labels, NameStyle style) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& w = labels[i];
    switch (style) {
      case NameStyle::camel:
        out += i == 0 ? w : capitalize(w);
        break;
      case NameStyle::pascal:
        out += capitalize(w);
        break;
      case NameStyle::snake:
        out += (i == 0 ? "" : "_") + w;
        break;
      case NameStyle::lower:
        out += w;
        break;
      case NameStyle::mixed:
        out += (i == 0 ? "" : (i % 2 == 1 ? "_" : "")) + w;
        break;
    }
  }
  return out;
}

std::vector<SyntheticName> synthetic_names(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& ws = words();
  const auto& ab = abbreviations();
  std::vector<SyntheticName> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const int parts = std::uniform_int_distribution<int>(2, 3)(rng);
    std::vector<std::string> surface;
    SyntheticName name;
    for (int p = 0; p < parts; ++p) {
      if (std::uniform_int_distribution<int>(0, 9)(rng) == 0) {
        const auto& [short_form, full] = pick(ab, rng);
        surface.push_back(short_form);
        name.labels.push_back(full);
      } else {
        const auto& w = pick(ws, rng);
        surface.push_back(w);
        name.labels.push_back(w);
      }
    }
    const auto style = static_cast<NameStyle>(std::uniform_int_distribution<int>(0, 4)(rng));
    name.raw = render_name(surface, style);
    out.push_back(std::move(name));
  }
  return out;
}

std::vector<std::string> synthetic_name_corpus(std::size_t lines, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& ws = words();
  const auto& ab = abbreviations();
  std::vector<std::string> out;
  out.reserve(lines);
  for (std::size_t n = 0; n < lines; ++n) {
    const int parts = std::uniform_int_distribution<int>(1, 3)(rng);
    std::vector<std::string> tokens;
    for (int p = 0; p < parts; ++p) {
      tokens.push_back(std::uniform_int_distribution<int>(0, 14)(rng) == 0 ? pick(ab, rng).first : pick(ws, rng));
    }
    out.push_back(util::join(tokens, " "));
  }
  return out;
}

std::vector<ingest::FunctionRecord> synthetic_dataset(const DatasetOptions& options) {
  if (options.variants.size() < 2) throw Error("synthetic dataset needs at least two optimization variants");
  if (options.sources > kVerbs.size() * kNouns.size()) throw Error("too many synthetic sources requested");
  std::mt19937_64 rng(options.seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t v = 0; v < kVerbs.size(); ++v) {
    for (std::size_t n = 0; n < kNouns.size(); ++n) pairs.emplace_back(v, n);
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);

  std::vector<ingest::FunctionRecord> out;
  for (std::size_t s = 0; s < options.sources; ++s) {
    const auto& verb = kVerbs[pairs[s].first];
    const auto& noun = kNouns[pairs[s].second];
    std::mt19937_64 src_rng(options.seed ^ util::fnv1a("source:" + std::to_string(s)));
    const Body body = make_body(verb, noun, src_rng);
    const auto style = std::uniform_int_distribution<int>(0, 1)(src_rng) == 0 ? NameStyle::camel : NameStyle::snake;
    const std::string name = render_name({verb, noun}, style);
    char sid[32];
    std::snprintf(sid, sizeof sid, "src%03zu", s);
    for (const auto opt : options.variants) {
      auto rec = assemble(body, opt, options.arch, src_rng);
      rec.source_id = sid;
      rec.id = std::string(sid) + "@" + std::string(ingest::to_string(opt));
      rec.name = name;
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace epitome::synthetic
