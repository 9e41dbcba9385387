#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spinfilter/asymptotics.hpp"
#include "spinfilter/dynamics.hpp"
#include "spinfilter/filter.hpp"
#include "spinfilter/functionals.hpp"
#include "spinfilter/model.hpp"
#include "spinfilter/observation.hpp"

namespace spinfilter {

using Json = nlohmann::ordered_json;

enum class Task { validate, simulate, filter, ergodicity, covariance, whitenoise };

Task parse_task(const std::string& name);
std::string task_name(Task task);

struct FilterTaskOptions {
  std::size_t ks_paths = 0;  ///< 0 disables the Bayes-ratio comparison
};

struct ErgodicityTaskOptions {
  std::vector<double> x0;
  std::vector<double> t_grid;
  std::size_t n_mc = 2000;
  std::optional<CylindricalFunction> phi;
  InvariantOptions invariant;
  std::optional<double> mu_oracle;
  double barycenter_horizon = 0.0;  ///< 0 skips the barycenter check
};

struct CovarianceTaskOptions {
  std::optional<CylindricalFunction> f;
  std::optional<CylindricalFunction> g;
  CovarianceOptions options;
};

struct WhiteNoiseTaskOptions {
  std::size_t n_mc = 10000;
  std::vector<double> eps{0.4, 0.2, 0.1};
  std::size_t replicas = 8;
};

struct ExperimentConfig {
  Json raw;
  Task task = Task::validate;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  std::optional<Model> model;
  SimConfig sim;
  std::vector<double> x0;
  std::optional<SensorSpec> sensor;
  double dt_obs = 1e-2;
  GaussianPrior prior;
  FilterConfig filter;
  std::vector<CylindricalFunction> dictionary;

  FilterTaskOptions filter_task;
  ErgodicityTaskOptions ergodicity;
  CovarianceTaskOptions covariance;
  WhiteNoiseTaskOptions whitenoise;

  [[nodiscard]] const Model& require_model() const;
  [[nodiscard]] const SensorSpec& require_sensor() const;
  [[nodiscard]] FilteringProblem problem() const;
};

/// Parses and validates a config document. Throws SchemaError naming the
/// offending JSON pointer; module validators run afterwards and throw
/// ConfigError / ValidationError.
ExperimentConfig parse_config(const Json& doc);
ExperimentConfig load_config(const std::string& path);

Json sensor_to_json(const SensorSpec& sensor);
SensorSpec sensor_from_json(const Json& j, std::size_t sites, const std::string& path = "/sensor");

}  // namespace spinfilter
