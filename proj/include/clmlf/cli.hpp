#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clmlf/training.hpp"

namespace clmlf::cli {

/// Everything a `train` run needs: the training config plus data and output
/// locations.
struct RunConfig {
  TrainConfig train;
  std::string train_path;
  std::string val_path;
  std::string test_path;
  std::string output_dir = "run";
};

/// Parses a TOML run file strictly. Throws ConfigError naming an unknown
/// key, and std::runtime_error naming a missing or malformed file.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

/// TOML text of the fully resolved config, with absolute paths.
std::string to_toml(const RunConfig& cfg);

std::string usage();

/// Runs one command. `args` excludes the program name. Returns 0 on success,
/// 1 on a runtime or config error, 2 on a usage error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clmlf::cli
