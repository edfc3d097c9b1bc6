#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace epitome::ingest {

enum class Arch { x86, x64, arm, mips, other };
enum class OptLevel { O0, O1, O2, O3, Os, unknown };
enum class EdgeKind { jump, fallthrough };

Arch parse_arch(std::string_view s);
OptLevel parse_opt(std::string_view s);
std::string_view to_string(Arch a);
std::string_view to_string(OptLevel o);
std::string_view to_string(EdgeKind k);

struct Instruction {
  std::size_t index = 0;
  std::string mnemonic;
  std::vector<std::string> operands;
  int block_id = 0;

  /// Mnemonic followed by operands: the word sequence the language model sees.
  std::vector<std::string> tokens() const;
  bool operator==(const Instruction&) const = default;
};

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeKind kind = EdgeKind::jump;
  bool operator==(const Edge&) const = default;
};

using DefUsePair = std::pair<std::size_t, std::size_t>;

struct FunctionRecord {
  std::string id;
  std::string name;
  std::string source_id;
  Arch arch = Arch::other;
  OptLevel opt = OptLevel::unknown;
  std::vector<Instruction> instructions;
  std::vector<Edge> edges;
  std::optional<std::vector<DefUsePair>> defuse;

  /// Throws epitome::Error describing the first violated invariant.
  void validate() const;
  std::size_t token_count() const;
  bool operator==(const FunctionRecord&) const = default;
};

// ---- JSONL input/output ----------------------------------------------------

FunctionRecord parse_function_record(std::string_view line, std::size_t line_no = 1);
std::vector<FunctionRecord> parse_function_records(std::istream& in);
std::vector<FunctionRecord> parse_function_records(const std::filesystem::path& path);

std::string to_json_line(const FunctionRecord& rec);
void write_function_records(const std::filesystem::path& path,
                            const std::vector<FunctionRecord>& records);

// ---- normalization ---------------------------------------------------------

bool is_register(std::string_view token);
bool is_branch_mnemonic(std::string_view mnemonic);
bool is_terminator(std::string_view mnemonic);
/// Parses decimal, 0x-hex, trailing-h hex and ARM '#'-prefixed immediates.
std::optional<std::int64_t> parse_immediate(std::string_view token);

std::string normalize_operand(std::string_view operand, bool branch_target);
Instruction normalize_instruction(const Instruction& inst);
FunctionRecord normalize_record(FunctionRecord rec);

// ---- fine-grained CFG --------------------------------------------------------

/// Instruction-level control-flow graph. Neighbor lists are sorted and free of
/// duplicates and self-loops. K-hop neighborhoods are computed on the
/// undirected view and memoized per k.
class FineGrainedCfg {
 public:
  FineGrainedCfg() = default;
  explicit FineGrainedCfg(std::size_t node_count);
  FineGrainedCfg(const FineGrainedCfg& other);
  FineGrainedCfg& operator=(const FineGrainedCfg& other);

  void add_edge(std::size_t src, std::size_t dst, EdgeKind kind);

  std::size_t node_count() const { return succ_.size(); }
  const std::vector<std::size_t>& successors(std::size_t v) const { return succ_.at(v); }
  const std::vector<std::size_t>& predecessors(std::size_t v) const { return pred_.at(v); }
  const std::vector<std::size_t>& neighbors(std::size_t v) const { return undirected_.at(v); }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t undirected_edge_count() const;

  /// N_v^k without v itself, sorted ascending.
  const std::vector<std::size_t>& khop(std::size_t v, std::size_t k) const;
  void precompute_khop(std::size_t max_k) const;

 private:
  const std::vector<std::vector<std::size_t>>& khop_table(std::size_t k) const;

  std::vector<std::vector<std::size_t>> succ_;
  std::vector<std::vector<std::size_t>> pred_;
  std::vector<std::vector<std::size_t>> undirected_;
  std::vector<Edge> edges_;
  mutable std::map<std::size_t, std::vector<std::vector<std::size_t>>> khop_cache_;
  mutable std::mutex cache_mutex_;
};

FineGrainedCfg build_fine_grained_cfg(const FunctionRecord& rec);
std::vector<std::size_t> khop_neighborhood(const FineGrainedCfg& cfg, std::size_t v, std::size_t k);

// ---- sequences and dataflow ------------------------------------------------

std::vector<std::vector<std::size_t>> extract_control_flow_sequences(const FunctionRecord& rec);

struct RegisterAccess {
  std::vector<std::string> defs;
  std::vector<std::string> uses;
};
RegisterAccess register_access(const Instruction& inst, Arch arch);

/// Register-level reaching definitions over the directed CFG. Returns
/// rec.defuse verbatim when the record carries one.
std::vector<DefUsePair> compute_defuse_pairs(const FunctionRecord& rec);

// ---- dataset splitting -------------------------------------------------------

struct DatasetSplit {
  int fold_id = 0;
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

std::vector<DatasetSplit> split_by_source(const std::vector<FunctionRecord>& records,
                                          int folds, std::uint64_t seed);

}  // namespace epitome::ingest
