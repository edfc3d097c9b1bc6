#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace epitome::util {

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delim);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// `key=value` lines in order; blank lines and '#' comments skipped.
std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view s);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is visited
/// exactly once; callers write results into pre-sized slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  jobs = std::min(jobs, n);
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t t = 0; t < jobs; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += jobs) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace epitome::util
