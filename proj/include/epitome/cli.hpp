#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace epitome::cli {

struct CommandResult {
  /// 0 on success, 1 on operational failure, 2 on usage errors.
  int exit_code = 0;
  std::vector<std::filesystem::path> artifacts_written;
  std::string summary;
};

/// Parses argv (without the program name) and runs one subcommand.
CommandResult run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Directory searched for the bundled corpus and lexicon when flags omit them:
/// $EPITOME_DATA_DIR, else the source tree's data/ directory.
std::filesystem::path default_data_dir();

}  // namespace epitome::cli
