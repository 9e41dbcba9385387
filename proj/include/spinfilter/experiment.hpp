#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "spinfilter/config.hpp"
#include "spinfilter/reference.hpp"

namespace spinfilter {

inline constexpr const char* kSpinfilterVersion = "0.1.0";

enum ExitCode : int {
  kExitOk = 0,
  kExitValidationFailed = 1,
  kExitSchemaError = 2,
  kExitNumericDivergence = 3,
};

struct RunResult {
  int exit_code = kExitOk;
  std::string status;   ///< ok | validation_failed | schema_error | numeric_divergence
  std::string message;  ///< first failure, empty on success
  std::filesystem::path output_dir;
  Json summary;
};

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};

/// Executes the configured task (or only the validation path) and writes
/// manifest.json, summary.json and the task CSVs under cfg.output_dir.
/// Never throws for run failures; the exit code carries the outcome.
RunResult run_experiment(const ExperimentConfig& cfg, bool validate_only = false);

/// Loads, applies overrides, parses and runs. Schema failures still leave a
/// manifest in the (possibly overridden) output directory.
RunResult run_config_file(const std::filesystem::path& config, const RunOverrides& overrides = {},
                          bool validate_only = false);

/// Tidy long-format plotdata.csv (series, t, value, stderr) from the CSVs
/// listed in the manifest. Missing manifest: exit code 2.
RunResult emit_plotdata(const std::filesystem::path& dir);

/// Structural constants of the model: alpha, beta, eta_min, omega, ...
Json hypothesis_summary(const ExperimentConfig& cfg);

/// The scalar linear-Gaussian parameters when the config describes one
/// (single site, affine-free linear drift, single linear channel).
std::optional<ScalarLinearGaussian> scalar_linear_reference(const ExperimentConfig& cfg);

}  // namespace spinfilter
