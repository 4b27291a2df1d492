#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "attrib3d/training.hpp"
#include "json.hpp"

namespace attrib3d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Everything a run depends on. Written as run_config.json into every output
/// directory; passing that file back via --config repeats the run.
struct RunConfig {
  std::string command;
  BenchmarkConfig benchmark;
  ModelConfig model;
  ProtocolConfig protocol;
  TrainConfig train;
  std::string data_dir;
  std::string out;
  std::string checkpoint;
  std::string input;  // mesh path for render / fingerprint / attribute
  std::uint64_t asset_seed = 0;
  std::string split = "test";  // evaluate: test | all
  std::string prompt;
  std::string prompt_image;
  int view_count = 4;
  double elevation = 20.0;
  int jobs = 1;

  nlohmann::json to_json() const;
  /// Fields absent from `j` keep their current values.
  void merge(const nlohmann::json& j);
};

/// Runs one command line (without the program name). Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace attrib3d::cli
