#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage error,
// 2 validation error (bad or missing inputs), 3 property failure.

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tdit/diffusion.hpp"
#include "tdit/model.hpp"
#include "tdit/synthdata.hpp"
#include "tdit/training.hpp"

namespace tdit {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,
  kExitPropertyFailure = 3,
};

/// Every setting a command may use. Built from defaults, then a JSON config
/// file, then flags (flags win), and written next to every output.
struct RunConfig {
  ModelConfig model;
  CorpusConfig corpus;
  SampleConfig sample;
  TrainConfig train;
};

nlohmann::json to_json(const RunConfig& rc);
/// Reads the "model", "corpus", "sample" and "train" sections; missing
/// sections keep defaults. "command" and "options" (as written by the CLI)
/// are ignored so a written run config can be fed back in.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

/// Runs one command. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tdit
