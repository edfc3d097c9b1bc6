#include "epitome/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome::ingest {

using json = nlohmann::json;

Arch parse_arch(std::string_view s) {
  const std::string v = util::to_lower(s);
  if (v == "x86") return Arch::x86;
  if (v == "x64" || v == "x86_64" || v == "amd64") return Arch::x64;
  if (v == "arm" || v == "arm64" || v == "aarch64") return Arch::arm;
  if (v == "mips" || v == "mips64") return Arch::mips;
  if (v == "other") return Arch::other;
  throw Error("unknown arch '" + std::string(s) + "'");
}

OptLevel parse_opt(std::string_view s) {
  if (s == "O0") return OptLevel::O0;
  if (s == "O1") return OptLevel::O1;
  if (s == "O2") return OptLevel::O2;
  if (s == "O3") return OptLevel::O3;
  if (s == "Os") return OptLevel::Os;
  if (s == "unknown") return OptLevel::unknown;
  throw Error("unknown opt level '" + std::string(s) + "'");
}

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::x86: return "x86";
    case Arch::x64: return "x64";
    case Arch::arm: return "arm";
    case Arch::mips: return "mips";
    case Arch::other: return "other";
  }
  return "other";
}

std::string_view to_string(OptLevel o) {
  switch (o) {
    case OptLevel::O0: return "O0";
    case OptLevel::O1: return "O1";
    case OptLevel::O2: return "O2";
    case OptLevel::O3: return "O3";
    case OptLevel::Os: return "Os";
    case OptLevel::unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(EdgeKind k) { return k == EdgeKind::jump ? "jump" : "fallthrough"; }

std::vector<std::string> Instruction::tokens() const {
  std::vector<std::string> out;
  out.reserve(1 + operands.size());
  out.push_back(mnemonic);
  out.insert(out.end(), operands.begin(), operands.end());
  return out;
}

std::size_t FunctionRecord::token_count() const {
  std::size_t n = 0;
  for (const auto& inst : instructions) n += 1 + inst.operands.size();
  return n;
}

void FunctionRecord::validate() const {
  if (id.empty()) throw Error("record has empty id");
  if (name.empty()) throw Error("record '" + id + "': name is empty");
  if (instructions.empty()) throw Error("record '" + id + "': function has no instructions");
  std::set<int> closed_blocks;
  for (std::size_t i = 0; i < instructions.size(); ++i) {
    const auto& inst = instructions[i];
    if (inst.index != i) throw Error("record '" + id + "': instruction indices are not dense");
    if (inst.mnemonic.empty()) throw Error("record '" + id + "': empty mnemonic at " + std::to_string(i));
    if (i > 0 && instructions[i - 1].block_id != inst.block_id) {
      closed_blocks.insert(instructions[i - 1].block_id);
      if (closed_blocks.count(inst.block_id) != 0u)
        throw Error("record '" + id + "': block " + std::to_string(inst.block_id) + " is not contiguous");
    }
  }
  const std::size_t n = instructions.size();
  for (const auto& e : edges) {
    if (e.src >= n || e.dst >= n) throw Error("record '" + id + "': edge endpoint out of range");
  }
  if (defuse) {
    for (const auto& [d, u] : *defuse) {
      if (d >= n || u >= n) throw Error("record '" + id + "': defuse endpoint out of range");
    }
  }
}

// ---- JSONL ------------------------------------------------------------------

namespace {

[[noreturn]] void field_error(std::size_t line_no, std::string_view field, std::string_view what) {
  throw Error("line " + std::to_string(line_no) + ": field '" + std::string(field) + "': " +
              std::string(what));
}

const json& require(const json& obj, const char* key, std::size_t line_no) {
  auto it = obj.find(key);
  if (it == obj.end()) field_error(line_no, key, "missing");
  return *it;
}

std::string require_string(const json& obj, const char* key, std::size_t line_no) {
  const json& v = require(obj, key, line_no);
  if (!v.is_string()) field_error(line_no, key, "expected string");
  return v.get<std::string>();
}

std::size_t as_index(const json& v, std::size_t line_no, const char* field) {
  if (!v.is_number_integer()) field_error(line_no, field, "expected integer");
  const auto x = v.get<std::int64_t>();
  if (x < 0) field_error(line_no, field, "negative index");
  return static_cast<std::size_t>(x);
}

}  // namespace

FunctionRecord parse_function_record(std::string_view line, std::size_t line_no) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
  }
  if (!obj.is_object()) throw Error("line " + std::to_string(line_no) + ": expected a JSON object");

  FunctionRecord rec;
  rec.id = require_string(obj, "id", line_no);
  rec.name = require_string(obj, "name", line_no);
  rec.source_id = require_string(obj, "source_id", line_no);
  try {
    rec.arch = parse_arch(require_string(obj, "arch", line_no));
  } catch (const Error& e) {
    field_error(line_no, "arch", e.what());
  }
  try {
    rec.opt = parse_opt(require_string(obj, "opt", line_no));
  } catch (const Error& e) {
    field_error(line_no, "opt", e.what());
  }
  if (rec.name.empty()) field_error(line_no, "name", "empty");

  const json& insts = require(obj, "instructions", line_no);
  if (!insts.is_array()) field_error(line_no, "instructions", "expected array");
  for (const auto& ji : insts) {
    if (!ji.is_object()) field_error(line_no, "instructions", "expected object");
    Instruction inst;
    inst.index = rec.instructions.size();
    inst.mnemonic = require_string(ji, "mnemonic", line_no);
    if (inst.mnemonic.empty()) field_error(line_no, "mnemonic", "empty");
    const json& ops = require(ji, "operands", line_no);
    if (!ops.is_array()) field_error(line_no, "operands", "expected array");
    for (const auto& op : ops) {
      if (!op.is_string()) field_error(line_no, "operands", "expected string");
      inst.operands.push_back(op.get<std::string>());
    }
    const json& bid = require(ji, "block_id", line_no);
    if (!bid.is_number_integer()) field_error(line_no, "block_id", "expected integer");
    inst.block_id = bid.get<int>();
    rec.instructions.push_back(std::move(inst));
  }

  const std::size_t n = rec.instructions.size();
  if (auto it = obj.find("edges"); it != obj.end()) {
    if (!it->is_array()) field_error(line_no, "edges", "expected array");
    for (const auto& je : *it) {
      if (!je.is_array() || je.size() != 3 || !je[2].is_string())
        field_error(line_no, "edges", "expected [int, int, str]");
      Edge e;
      e.src = as_index(je[0], line_no, "edges");
      e.dst = as_index(je[1], line_no, "edges");
      const auto kind = je[2].get<std::string>();
      if (kind == "jump") {
        e.kind = EdgeKind::jump;
      } else if (kind == "fallthrough") {
        e.kind = EdgeKind::fallthrough;
      } else {
        field_error(line_no, "edges", "unknown edge kind '" + kind + "'");
      }
      if (e.src >= n || e.dst >= n) field_error(line_no, "edges", "edge endpoint out of range");
      rec.edges.push_back(e);
    }
  }
  if (auto it = obj.find("defuse"); it != obj.end() && !it->is_null()) {
    if (!it->is_array()) field_error(line_no, "defuse", "expected array");
    std::vector<DefUsePair> pairs;
    for (const auto& jp : *it) {
      if (!jp.is_array() || jp.size() != 2) field_error(line_no, "defuse", "expected [int, int]");
      const auto d = as_index(jp[0], line_no, "defuse");
      const auto u = as_index(jp[1], line_no, "defuse");
      if (d >= n || u >= n) field_error(line_no, "defuse", "endpoint out of range");
      pairs.emplace_back(d, u);
    }
    rec.defuse = std::move(pairs);
  }
  try {
    rec.validate();
  } catch (const Error& e) {
    throw Error("line " + std::to_string(line_no) + ": " + e.what());
  }
  return rec;
}

std::vector<FunctionRecord> parse_function_records(std::istream& in) {
  std::vector<FunctionRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    auto rec = parse_function_record(line, line_no);
    if (!seen.insert(rec.id).second)
      throw Error("line " + std::to_string(line_no) + ": field 'id': duplicate id '" + rec.id + "'");
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<FunctionRecord> parse_function_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_function_records(in);
}

std::string to_json_line(const FunctionRecord& rec) {
  json obj;
  obj["id"] = rec.id;
  obj["name"] = rec.name;
  obj["source_id"] = rec.source_id;
  obj["arch"] = to_string(rec.arch);
  obj["opt"] = to_string(rec.opt);
  json insts = json::array();
  for (const auto& inst : rec.instructions) {
    insts.push_back({{"mnemonic", inst.mnemonic}, {"operands", inst.operands}, {"block_id", inst.block_id}});
  }
  obj["instructions"] = std::move(insts);
  json edges = json::array();
  for (const auto& e : rec.edges) edges.push_back(json::array({e.src, e.dst, to_string(e.kind)}));
  obj["edges"] = std::move(edges);
  if (rec.defuse) {
    json du = json::array();
    for (const auto& [d, u] : *rec.defuse) du.push_back(json::array({d, u}));
    obj["defuse"] = std::move(du);
  }
  return obj.dump();
}

void write_function_records(const std::filesystem::path& path,
                            const std::vector<FunctionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& rec : records) out << to_json_line(rec) << '\n';
}

// ---- normalization ---------------------------------------------------------

namespace {

std::unordered_set<std::string> build_register_table() {
  std::unordered_set<std::string> regs;
  for (const char* r : {"al", "ah", "ax", "eax", "rax", "bl", "bh", "bx", "ebx", "rbx", "cl", "ch", "cx",
                        "ecx", "rcx", "dl", "dh", "dx", "edx", "rdx", "si", "sil", "esi", "rsi", "di", "dil",
                        "edi", "rdi", "bp", "bpl", "ebp", "rbp", "sp", "spl", "esp", "rsp", "ip", "eip", "rip",
                        "cs", "ds", "es", "fs", "gs", "ss", "eflags", "rflags"}) {
    regs.insert(r);
  }
  for (int i = 8; i <= 15; ++i) {
    const auto base = "r" + std::to_string(i);
    for (const char* suffix : {"", "d", "w", "b"}) regs.insert(base + suffix);
  }
  for (int i = 0; i < 32; ++i) {
    const auto n = std::to_string(i);
    for (const char* p : {"xmm", "ymm", "zmm", "s", "d", "q", "v", "f", "$f"}) regs.insert(p + n);
    if (i < 8) regs.insert("st" + n);
    if (i < 16) regs.insert("r" + n);
    if (i <= 30) {
      regs.insert("x" + n);
      regs.insert("w" + n);
    }
    regs.insert("$" + n);
  }
  for (const char* r : {"lr", "pc", "fp", "sb", "sl", "xzr", "wzr", "cpsr"}) regs.insert(r);
  for (const char* r : {"zero", "at", "v0", "v1", "a0", "a1", "a2", "a3", "t0", "t1", "t2", "t3", "t4", "t5",
                        "t6", "t7", "t8", "t9", "s0", "s1", "s2", "s3", "s4", "s5", "s6", "s7", "s8", "k0",
                        "k1", "gp", "sp", "fp", "ra", "hi", "lo"}) {
    regs.insert(r);
    regs.insert(std::string("$") + r);
  }
  return regs;
}

bool is_placeholder(std::string_view t) { return t == "<imm>" || t == "<loc>" || t == "<str>"; }

bool is_memory_operand(std::string_view t) {
  return t.find('[') != std::string_view::npos || t.find('(') != std::string_view::npos;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '$' || c == '#' || c == '.';
}

std::string normalize_memory(std::string_view op) {
  std::string out;
  std::size_t i = 0;
  char prev_sep = '\0';
  while (i < op.size()) {
    if (!is_word_char(op[i])) {
      prev_sep = op[i];
      out.push_back(op[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < op.size() && is_word_char(op[j])) ++j;
    const auto run = op.substr(i, j - i);
    // Scale factors in base+index*scale addressing are not displacements.
    if (prev_sep != '*' && parse_immediate(run)) {
      out += "<imm>";
    } else {
      out += run;
    }
    i = j;
  }
  return out;
}

}  // namespace

bool is_register(std::string_view token) {
  static const std::unordered_set<std::string> table = build_register_table();
  return table.count(util::to_lower(token)) != 0u;
}

bool is_branch_mnemonic(std::string_view mnemonic) {
  const std::string m = util::to_lower(mnemonic);
  if (m.empty()) return false;
  if (m[0] == 'j') return true;
  if (m.rfind("call", 0) == 0 || m.rfind("loop", 0) == 0) return true;
  static const std::unordered_set<std::string> arm_mips = {
      "b",    "bl",   "blx",  "bx",   "bal",  "cbz",  "cbnz", "tbz",  "tbnz", "beq",  "bne",  "beqz",
      "bnez", "bgez", "bgtz", "blez", "bltz", "bgezal", "bltzal", "beql", "bnel"};
  if (arm_mips.count(m) != 0u) return true;
  if (m.rfind("b.", 0) == 0) return true;
  static const std::unordered_set<std::string> conds = {"eq", "ne", "cs", "hs", "cc", "lo", "mi", "pl", "vs",
                                                        "vc", "hi", "ls", "ge", "lt", "gt", "le", "al"};
  if (m.size() >= 3 && m[0] == 'b') {
    auto rest = m.substr(1);
    if (rest.size() > 2 && rest[0] == 'l') rest = rest.substr(1);  // bleq, blne
    if (conds.count(rest.substr(0, 2)) != 0u && rest.size() <= 4) return true;
  }
  return false;
}

bool is_terminator(std::string_view mnemonic) {
  static const std::unordered_set<std::string> term = {"ret", "retn", "retq", "jmp", "b", "j"};
  return term.count(util::to_lower(mnemonic)) != 0u;
}

std::optional<std::int64_t> parse_immediate(std::string_view token) {
  std::string_view t = token;
  if (!t.empty() && t.front() == '#') t.remove_prefix(1);
  bool negative = false;
  if (!t.empty() && (t.front() == '-' || t.front() == '+')) {
    negative = t.front() == '-';
    t.remove_prefix(1);
  }
  if (t.empty()) return std::nullopt;
  int base = 10;
  if (t.size() > 2 && t[0] == '0' && (t[1] == 'x' || t[1] == 'X')) {
    base = 16;
    t.remove_prefix(2);
  } else if (t.size() > 1 && (t.back() == 'h' || t.back() == 'H') &&
             std::isdigit(static_cast<unsigned char>(t.front())) != 0) {
    base = 16;
    t.remove_suffix(1);
  }
  if (t.empty()) return std::nullopt;
  std::uint64_t value = 0;
  constexpr std::uint64_t kCap = std::uint64_t{1} << 62;
  for (char c : t) {
    int digit = -1;
    if (c >= '0' && c <= '9') {
      digit = c - '0';
    } else if (base == 16 && c >= 'a' && c <= 'f') {
      digit = 10 + c - 'a';
    } else if (base == 16 && c >= 'A' && c <= 'F') {
      digit = 10 + c - 'A';
    }
    if (digit < 0) return std::nullopt;
    value = value > kCap ? kCap : value * static_cast<std::uint64_t>(base) + static_cast<std::uint64_t>(digit);
  }
  const auto v = static_cast<std::int64_t>(std::min(value, kCap));
  return negative ? -v : v;
}

std::string normalize_operand(std::string_view operand, bool branch_target) {
  std::string op = util::to_lower(util::trim(operand));
  if (op.empty() || is_placeholder(op)) return op;
  if (op.front() == '"' || op.front() == '\'') return "<str>";
  if (is_memory_operand(op)) return normalize_memory(op);
  if (branch_target) return is_register(op) ? op : "<loc>";
  if (auto v = parse_immediate(op)) {
    return (*v > 255 || *v < -255) ? "<imm>" : op;
  }
  return op;
}

Instruction normalize_instruction(const Instruction& inst) {
  Instruction out = inst;
  const bool branch = is_branch_mnemonic(inst.mnemonic);
  out.mnemonic = util::to_lower(inst.mnemonic);
  for (auto& op : out.operands) op = normalize_operand(op, branch);
  return out;
}

FunctionRecord normalize_record(FunctionRecord rec) {
  for (auto& inst : rec.instructions) inst = normalize_instruction(inst);
  return rec;
}

// ---- CFG -------------------------------------------------------------------

FineGrainedCfg::FineGrainedCfg(std::size_t node_count)
    : succ_(node_count), pred_(node_count), undirected_(node_count) {}

FineGrainedCfg::FineGrainedCfg(const FineGrainedCfg& other)
    : succ_(other.succ_), pred_(other.pred_), undirected_(other.undirected_), edges_(other.edges_) {
  std::lock_guard lock(other.cache_mutex_);
  khop_cache_ = other.khop_cache_;
}

FineGrainedCfg& FineGrainedCfg::operator=(const FineGrainedCfg& other) {
  if (this == &other) return *this;
  succ_ = other.succ_;
  pred_ = other.pred_;
  undirected_ = other.undirected_;
  edges_ = other.edges_;
  std::scoped_lock lock(cache_mutex_, other.cache_mutex_);
  khop_cache_ = other.khop_cache_;
  return *this;
}

namespace {
bool insert_sorted(std::vector<std::size_t>& v, std::size_t x) {
  auto it = std::lower_bound(v.begin(), v.end(), x);
  if (it != v.end() && *it == x) return false;
  v.insert(it, x);
  return true;
}
}  // namespace

void FineGrainedCfg::add_edge(std::size_t src, std::size_t dst, EdgeKind kind) {
  if (src >= node_count() || dst >= node_count()) throw Error("edge endpoint out of range");
  if (src == dst) return;
  if (insert_sorted(succ_[src], dst)) {
    insert_sorted(pred_[dst], src);
    edges_.push_back({src, dst, kind});
  }
  insert_sorted(undirected_[src], dst);
  insert_sorted(undirected_[dst], src);
  std::lock_guard lock(cache_mutex_);
  khop_cache_.clear();
}

std::size_t FineGrainedCfg::undirected_edge_count() const {
  std::size_t n = 0;
  for (const auto& adj : undirected_) n += adj.size();
  return n / 2;
}

const std::vector<std::vector<std::size_t>>& FineGrainedCfg::khop_table(std::size_t k) const {
  if (k == 0) throw Error("k must be >= 1");
  std::lock_guard lock(cache_mutex_);
  if (auto it = khop_cache_.find(k); it != khop_cache_.end()) return it->second;
  const std::size_t n = node_count();
  std::vector<std::vector<std::size_t>> table(n);
  std::vector<std::size_t> dist(n);
  constexpr auto kUnseen = static_cast<std::size_t>(-1);
  for (std::size_t v = 0; v < n; ++v) {
    std::fill(dist.begin(), dist.end(), kUnseen);
    std::deque<std::size_t> queue{v};
    dist[v] = 0;
    while (!queue.empty()) {
      const auto u = queue.front();
      queue.pop_front();
      if (dist[u] == k) continue;
      for (auto w : undirected_[u]) {
        if (dist[w] != kUnseen) continue;
        dist[w] = dist[u] + 1;
        table[v].push_back(w);
        queue.push_back(w);
      }
    }
    std::sort(table[v].begin(), table[v].end());
  }
  return khop_cache_.emplace(k, std::move(table)).first->second;
}

const std::vector<std::size_t>& FineGrainedCfg::khop(std::size_t v, std::size_t k) const {
  if (v >= node_count()) throw Error("node index out of range");
  return khop_table(k)[v];
}

void FineGrainedCfg::precompute_khop(std::size_t max_k) const {
  for (std::size_t k = 1; k <= max_k; ++k) khop_table(k);
}

FineGrainedCfg build_fine_grained_cfg(const FunctionRecord& rec) {
  const std::size_t n = rec.instructions.size();
  FineGrainedCfg cfg(n);
  std::vector<bool> has_fallthrough(n, false);
  for (const auto& e : rec.edges) {
    cfg.add_edge(e.src, e.dst, e.kind);
    if (e.kind == EdgeKind::fallthrough) has_fallthrough[e.src] = true;
  }
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (has_fallthrough[i] || is_terminator(rec.instructions[i].mnemonic)) continue;
    cfg.add_edge(i, i + 1, EdgeKind::fallthrough);
  }
  return cfg;
}

std::vector<std::size_t> khop_neighborhood(const FineGrainedCfg& cfg, std::size_t v, std::size_t k) {
  if (k == 0) throw Error("k must be >= 1");
  return cfg.khop(v, k);
}

// ---- sequences and dataflow ------------------------------------------------

std::vector<std::vector<std::size_t>> extract_control_flow_sequences(const FunctionRecord& rec) {
  if (rec.instructions.empty()) throw Error("function has no instructions");
  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t i = 0; i < rec.instructions.size(); ++i) {
    if (i == 0 || rec.instructions[i].block_id != rec.instructions[i - 1].block_id) blocks.emplace_back();
    blocks.back().push_back(i);
  }
  return blocks;
}

namespace {

void collect_registers(std::string_view operand, std::vector<std::string>& out) {
  const std::string op = util::to_lower(operand);
  std::size_t i = 0;
  while (i < op.size()) {
    if (!is_word_char(op[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < op.size() && is_word_char(op[j])) ++j;
    auto tok = op.substr(i, j - i);
    if (is_register(tok)) out.push_back(tok);
    i = j;
  }
}

bool starts_with_any(const std::string& m, std::initializer_list<const char*> prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const char* p) { return m.rfind(p, 0) == 0; });
}

}  // namespace

RegisterAccess register_access(const Instruction& inst, Arch arch) {
  RegisterAccess acc;
  const std::string m = util::to_lower(inst.mnemonic);
  if (inst.operands.empty()) return acc;

  const bool load_store_isa = arch == Arch::arm || arch == Arch::mips;
  const bool compare_only =
      m == "cmp" || m == "test" || m == "tst" || m == "cmn" || m == "teq" || m == "bt" || m == "push" ||
      is_branch_mnemonic(m) || m.rfind("ret", 0) == 0;
  const bool store = starts_with_any(m, {"str", "stp", "stm"}) || m == "sw" || m == "sb" || m == "sh" ||
                     m == "sd" || m == "swc1" || m == "sdc1";
  if (compare_only || store) {
    for (const auto& op : inst.operands) collect_registers(op, acc.uses);
    return acc;
  }

  const std::string& dst = inst.operands.front();
  const bool dst_is_reg = !is_memory_operand(dst) && is_register(dst);
  static const std::unordered_set<std::string> pure_write_x86 = {
      "mov", "movzx", "movsx", "movsxd", "movabs", "lea", "pop", "movd", "movq", "movss", "movsd",
      "movaps", "movups", "movdqa", "movdqu", "cdq", "cwde", "cdqe", "sete", "setne", "setg", "setl",
      "setge", "setle", "seta", "setb", "setae", "setbe"};
  bool pure_write = load_store_isa || pure_write_x86.count(m) != 0u ||
                    (m == "imul" && inst.operands.size() == 3);
  if (m == "xchg" || m == "xadd") pure_write = false;

  if (dst_is_reg) {
    acc.defs.push_back(util::to_lower(dst));
    if (!pure_write) acc.uses.push_back(util::to_lower(dst));
  } else {
    collect_registers(dst, acc.uses);
  }
  for (std::size_t i = 1; i < inst.operands.size(); ++i) collect_registers(inst.operands[i], acc.uses);
  std::sort(acc.uses.begin(), acc.uses.end());
  acc.uses.erase(std::unique(acc.uses.begin(), acc.uses.end()), acc.uses.end());
  return acc;
}

std::vector<DefUsePair> compute_defuse_pairs(const FunctionRecord& rec) {
  if (rec.defuse) return *rec.defuse;
  const std::size_t n = rec.instructions.size();
  if (n == 0) return {};
  const FineGrainedCfg cfg = build_fine_grained_cfg(rec);

  std::vector<RegisterAccess> access(n);
  std::unordered_map<std::string, std::size_t> reg_ids;
  for (std::size_t i = 0; i < n; ++i) {
    access[i] = register_access(rec.instructions[i], rec.arch);
    for (const auto& r : access[i].defs) reg_ids.emplace(r, reg_ids.size());
  }

  // Reaching-definition sets: per instruction, the set of defining indices per register.
  using DefSets = std::map<std::size_t, std::set<std::size_t>>;
  std::vector<DefSets> in(n);
  std::vector<DefSets> out(n);
  auto transfer = [&](std::size_t i) {
    DefSets result = in[i];
    for (const auto& r : access[i].defs) result[reg_ids.at(r)] = {i};
    return result;
  };
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      DefSets merged;
      for (auto p : cfg.predecessors(i)) {
        for (const auto& [reg, defs] : out[p]) merged[reg].insert(defs.begin(), defs.end());
      }
      in[i] = std::move(merged);
      auto next = transfer(i);
      if (next != out[i]) {
        out[i] = std::move(next);
        changed = true;
      }
    }
  }

  std::vector<DefUsePair> pairs;
  for (std::size_t u = 0; u < n; ++u) {
    for (const auto& r : access[u].uses) {
      auto rid = reg_ids.find(r);
      if (rid == reg_ids.end()) continue;
      auto it = in[u].find(rid->second);
      if (it == in[u].end()) continue;
      for (auto d : it->second) {
        if (d != u) pairs.emplace_back(d, u);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

// ---- splitting -------------------------------------------------------------

std::vector<DatasetSplit> split_by_source(const std::vector<FunctionRecord>& records, int folds,
                                          std::uint64_t seed) {
  if (folds < 1) throw Error("folds must be >= 1");
  std::vector<std::string> groups;
  std::unordered_map<std::string, std::vector<std::string>> members;
  for (const auto& rec : records) {
    auto [it, fresh] = members.try_emplace(rec.source_id);
    if (fresh) groups.push_back(rec.source_id);
    it->second.push_back(rec.id);
  }
  const std::size_t g = groups.size();
  if (g < static_cast<std::size_t>(folds) || g < 3)
    throw Error("need at least " + std::to_string(std::max(folds, 3)) + " source groups, got " +
                std::to_string(g));

  std::sort(groups.begin(), groups.end());
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);

  // held-out partitions take round(g/10) groups, at least one
  const std::size_t held = std::max<std::size_t>(1, (g + 5) / 10);
  std::vector<DatasetSplit> splits;
  for (int f = 0; f < folds; ++f) {
    DatasetSplit split;
    split.fold_id = f;
    split.seed = seed;
    const std::size_t offset = static_cast<std::size_t>(f) * g / static_cast<std::size_t>(folds);
    for (std::size_t i = 0; i < g; ++i) {
      const auto& group = groups[(offset + i) % g];
      auto& dest = i < held ? split.test : (i < 2 * held ? split.valid : split.train);
      const auto& ids = members.at(group);
      dest.insert(dest.end(), ids.begin(), ids.end());
    }
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace epitome::ingest
