#pragma once

// Command-line surface: generate, preprocess, train, eval, matrix and
// reproduce. Every command resolves its settings as flag > config file >
// default (EMAG_SEED replaces the default seed), materializes them into a
// single JSON document and records that document in a manifest next to its
// outputs.

#include "emag/errors.hpp"

#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace emag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

// Runs one command line (args excludes the program name) and returns the
// process exit code. Diagnostics go to err, results to out.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Default settings of a command with every field materialized.
nlohmann::json default_config(const std::string& command);

// Overlays `overrides` on `base`, rejecting keys the base does not have and
// values whose JSON type differs. Throws UsageError naming the key path.
void merge_checked(nlohmann::json& base, const nlohmann::json& overrides, const std::string& where = "");

// Executes a fully resolved command document (as stored in a manifest).
int execute(const nlohmann::json& resolved, std::ostream& out, std::ostream& err);

// Manifest location for an output: dir/manifest.json for directory outputs,
// file.manifest.json beside file outputs.
std::filesystem::path manifest_path(const std::string& command, const std::filesystem::path& out);

std::string sha256_file(const std::filesystem::path& path);

}  // namespace emag::cli
