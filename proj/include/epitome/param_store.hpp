#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace epitome {

using Matrix = Eigen::MatrixXd;

struct ParamEntry {
  Matrix value;
  Matrix grad;
  // Adam moment buffers, allocated lazily by the optimizer.
  Matrix adam_m;
  Matrix adam_v;
};

enum class Init { zeros, ones, uniform_fan_in, normal_embedding };

/// Named, shaped parameter arrays with paired gradient buffers: the entire
/// model state. Iteration order is lexicographic by name, which fixes the
/// checkpoint layout.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  /// Creates a parameter; uniform_fan_in draws from U(-1/sqrt(rows), 1/sqrt(rows)).
  Matrix& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init);

  bool contains(const std::string& name) const { return entries_.count(name) != 0u; }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  Matrix& value(const std::string& name) { return at(name).value; }
  const Matrix& value(const std::string& name) const { return at(name).value; }
  Matrix& grad(const std::string& name) { return at(name).grad; }
  const Matrix& grad(const std::string& name) const { return at(name).grad; }

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  std::size_t scalar_count() const;
  std::uint64_t seed() const { return seed_; }

  void zero_grad();
  double grad_norm(const std::string& prefix = "") const;
  /// Throws if any value is NaN or infinite.
  void check_finite() const;

  /// Writes `<dir>/manifest.txt` and `<dir>/params.bin`. Optimizer moments are
  /// included as `adam.m:<name>` / `adam.v:<name>` entries when present.
  void save(const std::filesystem::path& dir, bool include_optimizer_state = true) const;
  static ParamStore load(const std::filesystem::path& dir);

  /// Bitwise equality of names, shapes and values (optimizer state excluded).
  bool same_values(const ParamStore& other) const;

  std::map<std::string, ParamEntry>& entries() { return entries_; }
  const std::map<std::string, ParamEntry>& entries() const { return entries_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace epitome
