#pragma once

#include <filesystem>
#include <initializer_list>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "epitome/ingest.hpp"

namespace testing {

struct Ins {
  std::string mnemonic;
  std::vector<std::string> operands;
  int block = 0;
};

inline epitome::ingest::FunctionRecord make_record(const std::string& id, const std::vector<Ins>& body,
                                                   std::vector<epitome::ingest::Edge> edges = {},
                                                   const std::string& name = "f", const std::string& source = "s",
                                                   epitome::ingest::OptLevel opt = epitome::ingest::OptLevel::O0) {
  epitome::ingest::FunctionRecord rec;
  rec.id = id;
  rec.name = name;
  rec.source_id = source;
  rec.arch = epitome::ingest::Arch::x86;
  rec.opt = opt;
  for (std::size_t i = 0; i < body.size(); ++i) {
    rec.instructions.push_back({i, body[i].mnemonic, body[i].operands, body[i].block});
  }
  rec.edges = std::move(edges);
  return rec;
}

/// Straight-line body of n `nop`s in one block.
inline epitome::ingest::FunctionRecord nops(const std::string& id, std::size_t n) {
  std::vector<Ins> body(n, Ins{"nop", {}, 0});
  return make_record(id, body);
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("epitome_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::filesystem::path data_dir() { return EPITOME_TEST_DATA_DIR; }
inline std::filesystem::path fixture_dir() { return EPITOME_TEST_FIXTURE_DIR; }

}  // namespace testing
