#pragma once

#include <iosfwd>

#include <json.hpp>

#include "mgtood/detectors.hpp"

namespace mgtood::cli {

enum ExitCode { kOk = 0, kRuntimeError = 1, kUsageError = 2 };

/// Runs one command. Reports go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Flat training config: the keys of hyper_to_json plus method, data, out
/// and log. Unknown keys raise ConfigError.
nlohmann::json default_config();
nlohmann::json merge_config(nlohmann::json base, const nlohmann::json& overrides);
TrainConfig train_config_from_json(const nlohmann::json& config);

}  // namespace mgtood::cli
