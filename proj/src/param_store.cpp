#include "epitome/param_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "epitome/error.hpp"
#include "epitome/util.hpp"

namespace epitome {

namespace {

constexpr const char* kManifestHeader = "epitome-checkpoint v1";

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out = (out << 8) | ((v >> (8 * i)) & 0xff);
    return out;
  }
}

}  // namespace

Matrix& ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init) {
  if (contains(name)) throw Error("duplicate parameter '" + name + "'");
  ParamEntry e;
  e.value.resize(rows, cols);
  switch (init) {
    case Init::zeros:
      e.value.setZero();
      break;
    case Init::ones:
      e.value.setOnes();
      break;
    case Init::uniform_fan_in: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(1, rows)));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = u(rng_);
      break;
    }
    case Init::normal_embedding: {
      std::normal_distribution<double> n(0.0, 0.02);
      for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = n(rng_);
      break;
    }
  }
  e.grad = Matrix::Zero(rows, cols);
  return entries_.emplace(name, std::move(e)).first->second.value;
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_) {
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.setZero(e.value.rows(), e.value.cols());
}

double ParamStore::grad_norm(const std::string& prefix) const {
  double sq = 0.0;
  for (const auto& [name, e] : entries_) {
    if (name.rfind(prefix, 0) == 0) sq += e.grad.squaredNorm();
  }
  return std::sqrt(sq);
}

void ParamStore::check_finite() const {
  for (const auto& [name, e] : entries_) {
    if (!e.value.allFinite()) throw Error("parameter '" + name + "' has non-finite values");
  }
}

void ParamStore::save(const std::filesystem::path& dir, bool include_optimizer_state) const {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n' << "seed\t" << seed_ << '\n';
  std::string payload;
  auto emit = [&](const std::string& name, const Matrix& m) {
    manifest << name << '\t' << m.rows() << '\t' << m.cols() << "\tf64\t" << payload.size() << '\n';
    // Row-major order in the payload regardless of in-memory layout.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const auto bits = to_little_endian(std::bit_cast<std::uint64_t>(m(r, c)));
        char buf[8];
        std::memcpy(buf, &bits, 8);
        payload.append(buf, 8);
      }
    }
  };
  for (const auto& [name, e] : entries_) emit(name, e.value);
  if (include_optimizer_state) {
    for (const auto& [name, e] : entries_) {
      if (e.adam_m.size() == 0) continue;
      emit("adam.m:" + name, e.adam_m);
      emit("adam.v:" + name, e.adam_v);
    }
  }
  util::write_file(dir / "manifest.txt", manifest.str());
  util::write_file(dir / "params.bin", payload);
}

ParamStore ParamStore::load(const std::filesystem::path& dir) {
  const auto lines = util::read_lines(dir / "manifest.txt");
  const std::string payload = util::read_file(dir / "params.bin");
  if (lines.size() < 2 || lines[0] != kManifestHeader) throw Error("not an epitome checkpoint: " + dir.string());
  const auto seed_fields = util::split(lines[1], '\t');
  if (seed_fields.size() != 2 || seed_fields[0] != "seed") throw Error("checkpoint manifest lacks a seed line");
  ParamStore store(std::stoull(seed_fields[1]));

  for (std::size_t i = 2; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = util::split(lines[i], '\t');
    if (f.size() != 5 || f[3] != "f64") throw Error("malformed manifest line " + std::to_string(i + 1));
    const auto rows = static_cast<Eigen::Index>(std::stoll(f[1]));
    const auto cols = static_cast<Eigen::Index>(std::stoll(f[2]));
    const auto offset = static_cast<std::size_t>(std::stoull(f[4]));
    if (offset + static_cast<std::size_t>(rows * cols) * 8 > payload.size())
      throw Error("checkpoint payload too short for '" + f[0] + "'");
    Matrix m(rows, cols);
    std::size_t pos = offset;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, payload.data() + pos, 8);
        m(r, c) = std::bit_cast<double>(to_little_endian(bits));
        pos += 8;
      }
    }
    const std::string& name = f[0];
    if (name.rfind("adam.m:", 0) == 0) {
      store.at(name.substr(7)).adam_m = std::move(m);
    } else if (name.rfind("adam.v:", 0) == 0) {
      store.at(name.substr(7)).adam_v = std::move(m);
    } else {
      ParamEntry e;
      e.grad = Matrix::Zero(rows, cols);
      e.value = std::move(m);
      if (!store.entries_.emplace(name, std::move(e)).second) throw Error("duplicate parameter '" + name + "'");
    }
  }
  return store;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (auto a = entries_.begin(), b = other.entries_.begin(); a != entries_.end(); ++a, ++b) {
    if (a->first != b->first) return false;
    const auto& x = a->second.value;
    const auto& y = b->second.value;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace epitome
