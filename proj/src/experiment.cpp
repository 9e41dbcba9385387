#include "spinfilter/experiment.hpp"

#include <Eigen/Core>
#include <oneapi/tbb/version.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "spinfilter/asymptotics.hpp"
#include "spinfilter/errors.hpp"
#include "spinfilter/io.hpp"
#include "spinfilter/parallel.hpp"
#include "spinfilter/whitenoise.hpp"

namespace spinfilter {
namespace {

// Seed streams derived from the config seed, one per consumer.
constexpr std::uint64_t kKsSeedTag = 0x4B53;
constexpr std::uint64_t kBarycenterSeedTag = 0x4243;
constexpr std::uint64_t kCovarianceSeedTag = 0x434F56;
constexpr std::uint64_t kWhiteNoiseSeedTag = 0x574E;

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag) { return CounterRng(seed).fork(tag).seed(); }

Json number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? Json("nan") : Json(v > 0 ? "inf" : "-inf");
}

Json numbers(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

struct Checks {
  Json list = Json::array();
  std::string first_failure;

  void add(const std::string& name, double value, const std::string& relation, double threshold, bool pass,
           bool hard = true) {
    Json c;
    c["name"] = name;
    c["value"] = number(value);
    c["relation"] = relation;
    c["threshold"] = number(threshold);
    c["pass"] = pass;
    c["hard"] = hard;
    list.push_back(std::move(c));
    if (hard && !pass && first_failure.empty()) first_failure = name;
  }
  void below(const std::string& name, double value, double threshold, bool hard = true) {
    add(name, value, "<", threshold, value < threshold, hard);
  }
  void flag(const std::string& name, bool ok, bool hard = true) {
    add(name, ok ? 1.0 : 0.0, "==", 1.0, ok, hard);
  }
  [[nodiscard]] bool failed() const { return !first_failure.empty(); }
};

// Tracks where a run is so a divergence can name its step.
struct Progress {
  std::string stage = "setup";
  std::size_t step = 0;
};

class Artifacts {
 public:
  explicit Artifacts(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& text) {
    write_text_file(dir_ / name, text);
    if (std::find(names_.begin(), names_.end(), name) == names_.end()) names_.push_back(name);
  }
  template <class F>
  void csv(const std::string& name, F&& fill) {
    std::ostringstream out;
    fill(out);
    write(name, out.str());
  }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> names_;
};

std::vector<TestFunction> as_functions(std::span<const CylindricalFunction> fs) {
  std::vector<TestFunction> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(f.as_function());
  return out;
}

std::vector<std::string> unique_names(std::span<const CylindricalFunction> fs) {
  std::vector<std::string> names;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < fs.size(); ++i) {
    std::string n = fs[i].name();
    if (!seen.insert(n).second) {
      n += "#" + std::to_string(i);
      seen.insert(n);
    }
    names.push_back(n);
  }
  return names;
}

Json version_info() {
  Json v;
  v["spinfilter"] = kSpinfilterVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  v["tbb"] = std::to_string(TBB_VERSION_MAJOR) + "." + std::to_string(TBB_VERSION_MINOR);
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
#if defined(__VERSION__)
  v["compiler"] = __VERSION__;
#endif
  return v;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* status_name(int code) {
  switch (code) {
    case kExitOk: return "ok";
    case kExitValidationFailed: return "validation_failed";
    case kExitSchemaError: return "schema_error";
    case kExitNumericDivergence: return "numeric_divergence";
  }
  return "error";
}

// ---------------------------------------------------------------------------
// Tasks

void task_simulate(const ExperimentConfig& cfg, Artifacts& art, Json& summary, Progress& progress) {
  const auto& model = cfg.require_model();
  progress.stage = "simulate";
  SignalPath path;
  if (cfg.sensor) {
    const auto both = simulate_observed(cfg.x0, model, *cfg.sensor, cfg.sim, cfg.dt_obs);
    path = both.signal;
    art.csv("observations.csv", [&](std::ostream& o) { write_observation_csv(o, both.observations); });
    art.write("observations.json", observation_sidecar(both.observations, *cfg.sensor).dump(2) + "\n");
    summary["observation_steps"] = both.observations.steps();
  } else {
    path = simulate_signal(cfg.x0, model, cfg.sim);
  }
  art.csv("path.csv", [&](std::ostream& o) { write_path_csv(o, path); });
  art.csv("path.bin", [&](std::ostream& o) { write_path_binary(o, path); });
  double max_abs = 0.0;
  for (double v : path.states) max_abs = std::max(max_abs, std::abs(v));
  summary["saved_rows"] = path.size();
  summary["max_abs_state"] = number(max_abs);
  const auto last = path.state(path.size() - 1);
  summary["final_state"] = numbers(last);
}

void task_filter(const ExperimentConfig& cfg, Artifacts& art, Json& summary, Checks& checks, Progress& progress) {
  const auto problem = cfg.problem();
  const auto& sensor = problem.sensor;
  SimConfig sim = cfg.sim;
  sim.save_stride = problem.substeps();
  progress.stage = "simulate";
  const auto truth = simulate_observed(cfg.x0, problem.model, sensor, sim, cfg.dt_obs);
  const auto& obs = truth.observations;
  art.csv("path.csv", [&](std::ostream& o) { write_path_csv(o, truth.signal); });
  art.csv("observations.csv", [&](std::ostream& o) { write_observation_csv(o, obs); });
  art.write("observations.json", observation_sidecar(obs, sensor).dump(2) + "\n");

  const auto dict = as_functions(cfg.dictionary);
  const auto names = unique_names(cfg.dictionary);
  const std::size_t ch = sensor.channels();
  const auto x0fn = CylindricalFunction::at_site(Shape::identity, 0, problem.model.site_count());
  const auto x0sq = CylindricalFunction::at_site(Shape::square, 0, problem.model.site_count());
  const TestFunction one = [](std::span<const double>) { return 1.0; };

  double zakai_gap = 0.0;
  std::vector<double> h_est;
  std::vector<double> mean0;
  std::vector<double> var0;
  progress.stage = "filter";
  auto observer = [&](const ParticleEnsemble& ens, std::size_t step) {
    progress.step = step;
    const double mass = zakai_moment(ens, one);
    for (const auto& f : dict) {
      zakai_gap = std::max(zakai_gap, std::abs(posterior_moment(ens, f) - zakai_moment(ens, f) / mass));
    }
    const auto w = ens.normalized_weights();
    std::vector<double> h(ch);
    std::vector<double> acc(ch, 0.0);
    for (std::size_t i = 0; i < ens.size(); ++i) {
      sensor.evaluate(ens.particle(i), h);
      for (std::size_t c = 0; c < ch; ++c) acc[c] += w[i] * h[c];
    }
    h_est.insert(h_est.end(), acc.begin(), acc.end());
    const double m = posterior_moment(ens, x0fn.as_function());
    mean0.push_back(m);
    var0.push_back(posterior_moment(ens, x0sq.as_function()) - m * m);
  };
  const auto run = run_particle_filter(obs, problem, cfg.prior, cfg.filter, dict, observer);

  art.csv("filter.csv", [&](std::ostream& o) {
    std::vector<std::string> header{"t"};
    header.insert(header.end(), names.begin(), names.end());
    header.push_back("ess");
    header.push_back("log_mass");
    CsvWriter w(o, header);
    for (const auto& r : run.records) {
      std::vector<double> row{r.t};
      row.insert(row.end(), r.moments.begin(), r.moments.end());
      row.push_back(r.ess);
      row.push_back(r.log_mass);
      w.row(row);
    }
  });

  const auto& fin = run.records.back();
  Json final_moments;
  for (std::size_t k = 0; k < names.size(); ++k) final_moments[names[k]] = number(fin.moments[k]);
  summary["final_posterior"] = final_moments;
  summary["resample_count"] = run.final_ensemble.resample_count;
  summary["min_ess"] = [&] {
    double m = INFINITY;
    for (const auto& r : run.records) m = std::min(m, r.ess);
    return number(m);
  }();
  summary["zakai_identity_max"] = number(zakai_gap);
  checks.below("zakai_identity_max", zakai_gap, 1e-12);

  h_est.resize(obs.steps() * ch);
  const auto inn = innovation_path(obs, h_est);
  Json innovation;
  innovation["quadratic_variation"] = numbers(inn.quadratic_variation);
  innovation["horizon"] = number(obs.horizon());
  innovation["lag1_autocorrelation"] = numbers(inn.lag1_autocorrelation);
  summary["innovation"] = innovation;
  const double qv_tol = 3.0 / std::sqrt(static_cast<double>(obs.steps()));
  double qv_dev = 0.0;
  double ac_max = 0.0;
  for (std::size_t c = 0; c < ch; ++c) {
    qv_dev = std::max(qv_dev, std::abs(inn.quadratic_variation[c] / obs.horizon() - 1.0));
    ac_max = std::max(ac_max, std::abs(inn.lag1_autocorrelation[c]));
  }
  checks.below("innovation_qv_rel_dev", qv_dev, std::max(0.05, 2.0 * qv_tol), false);
  checks.below("innovation_lag1_abs", ac_max, qv_tol, false);

  if (const auto ref = scalar_linear_reference(cfg)) {
    const auto kb = kalman_bucy(*ref, obs);
    const double mean_err = relative_l1_error(mean0, kb.mean);
    const double var_err = relative_l1_error(var0, kb.variance);
    summary["kalman_rel_err_mean"] = number(mean_err);
    summary["kalman_rel_err_variance"] = number(var_err);
    checks.below("kalman_rel_err_mean", mean_err, 0.05);
    checks.below("kalman_rel_err_variance", var_err, 0.10);
    art.csv("kalman.csv", [&](std::ostream& o) {
      CsvWriter w(o, {"t", "pf_mean", "pf_variance", "kalman_mean", "kalman_variance"});
      for (std::size_t n = 0; n < kb.t.size(); ++n) w.row({kb.t[n], mean0[n], var0[n], kb.mean[n], kb.variance[n]});
    });
  }

  if (cfg.filter_task.ks_paths > 0 && !problem.model.noise.correlated()) {
    progress.stage = "ks_posterior";
    const auto ks =
        ks_posterior(obs, problem, cfg.prior, cfg.filter_task.ks_paths, dict, derived_seed(cfg.seed, kKsSeedTag));
    const auto w = run.final_ensemble.normalized_weights();
    Json cmp = Json::array();
    double zmax = 0.0;
    for (std::size_t k = 0; k < dict.size(); ++k) {
      const double m = fin.moments[k];
      double v = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = dict[k](run.final_ensemble.particle(i)) - m;
        v += w[i] * d * d;
      }
      const double pf_se = std::sqrt(v / std::max(fin.ess, 1.0));
      const double se = std::hypot(pf_se, ks.std_error[k]);
      const double z = se > 0.0 ? std::abs(m - ks.estimate[k]) / se : 0.0;
      zmax = std::max(zmax, z);
      cmp.push_back({{"name", names[k]},
                     {"filter", number(m)},
                     {"filter_se", number(pf_se)},
                     {"ks", number(ks.estimate[k])},
                     {"ks_se", number(ks.std_error[k])},
                     {"z", number(z)}});
    }
    summary["ks_comparison"] = cmp;
    summary["ks_ess"] = number(ks.ess);
    summary["ks_low_ess"] = ks.low_ess;
    checks.below("ks_max_z", zmax, 3.0);
  }
}

void task_ergodicity(const ExperimentConfig& cfg, Artifacts& art, Json& summary, Checks& checks,
                     Progress& progress) {
  const auto& model = cfg.require_model();
  const auto& eo = cfg.ergodicity;
  const std::size_t sites = model.site_count();
  std::vector<double> x0 = eo.x0.empty() ? std::vector<double>(sites, 1.0) : eo.x0;
  std::vector<double> grid = eo.t_grid;
  if (grid.empty()) {
    for (int i = 0; i <= 20; ++i) grid.push_back(0.25 * i);
  }
  const auto phi = eo.phi ? *eo.phi : CylindricalFunction::at_site(Shape::identity, 0, sites);
  if (!std::isfinite(phi.lipschitz())) throw SchemaError("/ergodicity/phi", "phi must be Lipschitz");

  std::vector<CylindricalFunction> fns{phi};
  for (const auto& f : cfg.dictionary) {
    if (f.name() != phi.name()) fns.push_back(f);
  }
  const auto names = unique_names(fns);

  progress.stage = "semigroup";
  std::vector<SemigroupEstimate> sg;
  for (const auto& f : fns) sg.push_back(estimate_semigroup(x0, f.as_function(), grid, eo.n_mc, model, cfg.sim));

  progress.stage = "invariant";
  const auto inv = estimate_invariant_measure(model, cfg.sim, eo.invariant, fns);
  Json invj;
  invj["site_mean"] = numbers(inv.site_mean);
  invj["site_mean_se"] = numbers(inv.site_mean_se);
  invj["site_variance"] = numbers(inv.site_variance);
  invj["site_variance_se"] = numbers(inv.site_variance_se);
  invj["pooled_variance"] = number(inv.pooled_variance);
  invj["pooled_variance_se"] = number(inv.pooled_variance_se);
  invj["burn_in"] = number(inv.burn_in);
  invj["samples_per_chain"] = inv.samples_per_chain;
  invj["max_chain_z"] = number(inv.max_chain_z);
  invj["converged"] = inv.converged;
  Json moments = Json::array();
  for (std::size_t k = 0; k < inv.moments.size(); ++k) {
    moments.push_back({{"name", names[k]},
                       {"mean", number(inv.moments[k].mean)},
                       {"std_error", number(inv.moments[k].std_error)}});
  }
  invj["moments"] = moments;
  summary["invariant"] = invj;
  checks.flag("invariant_chains_agree", inv.converged);

  double mu = inv.moments[0].mean;
  double mu_se = inv.moments[0].std_error;
  if (eo.mu_oracle) {
    const double z = mu_se > 0.0 ? std::abs(mu - *eo.mu_oracle) / mu_se : 0.0;
    summary["mu_oracle"] = number(*eo.mu_oracle);
    checks.below("invariant_vs_oracle_z", z, 3.0);
    mu = *eo.mu_oracle;
    mu_se = 0.0;
  }

  const std::size_t nt = grid.size();
  std::vector<double> gap(nt);
  std::vector<double> gap_se(nt);
  for (std::size_t i = 0; i < nt; ++i) {
    gap[i] = std::abs(sg[0].values[i] - mu);
    gap_se[i] = std::hypot(sg[0].std_error[i], mu_se);
  }
  const double x_norm = weighted_norm(x0, model.lattice, 2.0);
  std::optional<RateFit> fit;
  try {
    fit = fit_convergence_rate(grid, gap, gap_se, x_norm, phi.lipschitz());
  } catch (const ValidationError& e) {
    summary["rate_fit_error"] = e.what();
    checks.flag("rate_fit_possible", false);
  }
  if (fit) {
    summary["rate_fit"] = {{"omega", number(fit->omega)},      {"C", number(fit->c)},
                           {"residual", number(fit->residual)}, {"tolerance", number(fit->tolerance)},
                           {"t_min", number(fit->t_min)},       {"t_max", number(fit->t_max)},
                           {"points", fit->points},             {"max_excess", number(fit->max_excess)},
                           {"envelope_ok", fit->envelope_ok}};
    summary["guaranteed_rate"] = number(model.guaranteed_rate());
    checks.flag("gaps_under_envelope", fit->envelope_ok);
  }

  art.csv("semigroup.csv", [&](std::ostream& o) {
    std::vector<std::string> header{"t"};
    for (const auto& n : names) {
      header.push_back(n);
      header.push_back(n + "_se");
    }
    header.insert(header.end(), {"gap", "gap_se", "envelope"});
    CsvWriter w(o, header);
    for (std::size_t i = 0; i < nt; ++i) {
      std::vector<double> row{grid[i]};
      for (const auto& s : sg) {
        row.push_back(s.values[i]);
        row.push_back(s.std_error[i]);
      }
      row.push_back(gap[i]);
      row.push_back(gap_se[i]);
      row.push_back(fit ? fit->envelope[i] : NAN);
      w.row(row);
    }
  });

  if (eo.barycenter_horizon > 0.0) {
    progress.stage = "barycenter";
    BarycenterOptions bo;
    bo.horizon = eo.barycenter_horizon;
    bo.prior = cfg.prior;
    bo.filter = cfg.filter;
    bo.invariant = eo.invariant;
    bo.seed = derived_seed(cfg.seed, kBarycenterSeedTag);
    const auto rep = barycenter_check(cfg.problem(), cfg.dictionary, bo);
    Json b = Json::array();
    for (const auto& e : rep.entries) {
      b.push_back({{"name", e.name},
                   {"filter_average", number(e.filter_average)},
                   {"filter_se", number(e.filter_se)},
                   {"invariant_mean", number(e.invariant_mean)},
                   {"invariant_se", number(e.invariant_se)},
                   {"z", number(e.z)},
                   {"ok", e.ok}});
    }
    summary["barycenter"] = {{"entries", b}, {"burn_in", number(rep.burn_in)}, {"caveat", rep.caveat}};
    checks.flag("barycenter_identity", rep.ok);
  }
}

void task_covariance(const ExperimentConfig& cfg, Artifacts& art, Json& summary, Checks& checks,
                     Progress& progress) {
  const auto problem = cfg.problem();
  const std::size_t sites = problem.model.site_count();
  const auto f = cfg.covariance.f ? *cfg.covariance.f : CylindricalFunction::at_site(Shape::identity, 0, sites);
  const auto g = cfg.covariance.g ? *cfg.covariance.g : f;
  CovarianceOptions opt = cfg.covariance.options;
  opt.prior = cfg.prior;
  opt.filter = cfg.filter;
  opt.seed = derived_seed(cfg.seed, kCovarianceSeedTag);
  progress.stage = "covariance";
  const auto tr = error_covariance_evolution(problem, f, g, opt);

  std::optional<std::vector<double>> riccati;
  const auto ref = scalar_linear_reference(cfg);
  const bool coordinate = f.shape() == Shape::identity && g.shape() == Shape::identity && sites == 1 &&
                          f.direction()[0] == 1.0 && g.direction()[0] == 1.0;
  if (ref && coordinate) {
    riccati.emplace();
    double sup = 0.0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
      const double p = riccati_solution(*ref, tr.t[k]);
      riccati->push_back(p);
      sup = std::max(sup, std::abs(tr.ode[k] - p) / p);
    }
    summary["riccati_sup_rel_err"] = number(sup);
    checks.below("riccati_sup_rel_err", sup, 0.02);
  }

  art.csv("covariance.csv", [&](std::ostream& o) {
    std::vector<std::string> header{"t",  "mc",   "mc_se", "ode", "ode_se", "posterior", "posterior_se",
                                    "q",  "q_se", "gap",   "gap_se"};
    if (riccati) header.push_back("riccati");
    CsvWriter w(o, header);
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
      std::vector<double> row{tr.t[k],         tr.mc[k],           tr.mc_se[k], tr.ode[k],
                              tr.ode_se[k],    tr.posterior[k],    tr.posterior_se[k],
                              tr.q[k],         tr.q_se[k],         tr.mc[k] - tr.ode[k],
                              std::hypot(tr.mc_se[k], tr.ode_se[k])};
      if (riccati) row.push_back((*riccati)[k]);
      w.row(row);
    }
  });
  summary["replicas"] = tr.replicas;
  summary["sup_gap"] = number(tr.sup_gap);
  summary["sup_gap_z"] = number(tr.sup_gap_z);
  summary["f"] = f.name();
  summary["g"] = g.name();
  checks.below("mc_vs_ode_sup_z", tr.sup_gap_z, 3.0);
}

void task_whitenoise(const ExperimentConfig& cfg, Artifacts& art, Json& summary, Checks& checks,
                     Progress& progress) {
  const auto problem = cfg.problem();
  if (problem.model.noise.correlated()) {
    throw SchemaError("/model/noise/sigma2", "the white-noise task needs independent signal noise");
  }
  SimConfig sim = cfg.sim;
  sim.save_stride = problem.substeps();
  progress.stage = "simulate";
  const auto truth = simulate_observed(cfg.x0, problem.model, problem.sensor, sim, cfg.dt_obs);
  const auto y = white_noise_from_increments(truth.observations);
  art.csv("white_noise.csv", [&](std::ostream& o) { write_white_noise_csv(o, y); });

  const auto dict = as_functions(cfg.dictionary);
  const auto names = unique_names(cfg.dictionary);
  progress.stage = "wn_filter";
  const auto run = run_wn_filter(y, problem, cfg.prior, cfg.filter, dict);
  art.csv("wn_filter.csv", [&](std::ostream& o) {
    std::vector<std::string> header{"t"};
    header.insert(header.end(), names.begin(), names.end());
    header.push_back("ess");
    header.push_back("log_mass");
    CsvWriter w(o, header);
    for (const auto& r : run.records) {
      std::vector<double> row{r.t};
      row.insert(row.end(), r.moments.begin(), r.moments.end());
      row.push_back(r.ess);
      row.push_back(r.log_mass);
      w.row(row);
    }
  });

  progress.stage = "wn_bayes";
  const auto seed = derived_seed(cfg.seed, kWhiteNoiseSeedTag);
  const auto wn = wn_bayes(y, problem, cfg.prior, cfg.whitenoise.n_mc, dict, seed);
  const auto ks = ks_posterior(truth.observations, problem, cfg.prior, cfg.whitenoise.n_mc, dict, seed);
  Json cmp = Json::array();
  double zmax = 0.0;
  for (std::size_t k = 0; k < dict.size(); ++k) {
    const double se = std::hypot(wn.std_error[k], ks.std_error[k]);
    const double z = se > 0.0 ? std::abs(wn.estimate[k] - ks.estimate[k]) / se : 0.0;
    zmax = std::max(zmax, z);
    cmp.push_back({{"name", names[k]},
                   {"white_noise", number(wn.estimate[k])},
                   {"white_noise_se", number(wn.std_error[k])},
                   {"ks", number(ks.estimate[k])},
                   {"ks_se", number(ks.std_error[k])},
                   {"z", number(z)}});
  }
  summary["bayes_comparison"] = cmp;
  summary["bayes_ess"] = {{"white_noise", number(wn.ess)}, {"ks", number(ks.ess)}};
  checks.below("wn_vs_ks_max_z", zmax, 3.0);

  progress.stage = "robustness";
  const auto rob =
      wn_robustness(y, cfg.whitenoise.eps, problem, cfg.prior, cfg.filter, dict, cfg.whitenoise.replicas);
  art.csv("robustness.csv", [&](std::ostream& o) {
    CsvWriter w(o, {"eps", "distance", "distance_se"});
    for (std::size_t k = 0; k < rob.eps.size(); ++k) w.row({rob.eps[k], rob.distance[k], rob.distance_se[k]});
  });
  summary["robustness"] = {{"eps", numbers(rob.eps)},
                           {"distance", numbers(rob.distance)},
                           {"distance_se", numbers(rob.distance_se)},
                           {"modulus", number(rob.modulus)},
                           {"replicas", rob.replicas},
                           {"monotone", rob.monotone}};
  checks.flag("robustness_monotone", rob.monotone);
}

Json base_manifest(const Json& config_echo, std::uint64_t seed, const std::string& task) {
  Json m;
  m["tool"] = "spinfilter";
  m["versions"] = version_info();
  m["task"] = task;
  m["seed"] = seed;
  m["started_utc"] = utc_now();
  m["workers"] = worker_count();
  m["config"] = config_echo;
  return m;
}

void write_manifest(const std::filesystem::path& dir, const Json& manifest) {
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

Json hypothesis_summary(const ExperimentConfig& cfg) {
  const auto& model = cfg.require_model();
  const auto hyp = verify_hypotheses(model.interaction, model.lattice);
  Json j;
  j["sites"] = model.site_count();
  j["alpha"] = number(hyp.alpha);
  j["beta"] = number(hyp.beta);
  j["norm_bound"] = number(hyp.norm_bound);
  j["weight_ratio_max"] = number(hyp.weight_ratio_max);
  j["weight_ratio_bound"] = number(hyp.weight_ratio_bound);
  j["eta_min"] = number(model.drift.eta());
  j["eta"] = number(model.dissipativity());
  j["lip_f1"] = number(model.drift.lipschitz_f1());
  j["omega"] = number(model.guaranteed_rate());
  j["interaction_range"] = number(model.interaction.range());
  j["dissipative"] = model.drift.dissipative();
  j["hypotheses_ok"] = hyp.ok;
  if (cfg.sensor) {
    j["sensor_growth_exponent"] = number(cfg.sensor->growth_exponent());
    j["sensor_growth_constant"] = number(cfg.sensor->growth_constant());
  }
  return j;
}

std::optional<ScalarLinearGaussian> scalar_linear_reference(const ExperimentConfig& cfg) {
  if (!cfg.model || !cfg.sensor) return std::nullopt;
  const auto& m = *cfg.model;
  const auto& s = *cfg.sensor;
  if (m.site_count() != 1 || s.channels() != 1 || s.kind() != SensorKind::linear) return std::nullopt;
  const auto& c = m.drift.f0().coefficients();
  if (c.size() > 2 || (!c.empty() && c[0] != 0.0)) return std::nullopt;
  ScalarLinearGaussian r;
  r.a = m.interaction.diagonal(0) + (c.size() == 2 ? c[1] : 0.0) + m.drift.f1_c();
  r.b = m.noise.b(0);
  r.h = s.weights()[0];
  r.sigma1 = m.noise.sigma1;
  r.sigma2 = m.noise.sigma2;
  r.m0 = cfg.prior.mean_at(0);
  r.p0 = cfg.prior.std_at(0) * cfg.prior.std_at(0);
  return r;
}

RunResult run_experiment(const ExperimentConfig& cfg, bool validate_only) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.output_dir = cfg.output_dir;
  const Task task = validate_only ? Task::validate : cfg.task;
  Json manifest = base_manifest(cfg.raw, cfg.seed, task_name(task));
  manifest["status"] = "running";
  Artifacts art(result.output_dir);
  Progress progress;
  Checks checks;
  Json summary;
  summary["task"] = task_name(task);
  summary["seed"] = cfg.seed;

  try {
    std::filesystem::create_directories(result.output_dir);
    write_manifest(result.output_dir, manifest);
    const auto hyp = hypothesis_summary(cfg);
    manifest["hypotheses"] = hyp;
    summary["hypotheses"] = hyp;
    checks.flag("interaction_hypotheses", hyp["hypotheses_ok"].get<bool>());
    if (cfg.sensor) {
      progress.stage = "problem";
      (void)cfg.problem();
    }
    switch (task) {
      case Task::validate: break;
      case Task::simulate: task_simulate(cfg, art, summary, progress); break;
      case Task::filter: task_filter(cfg, art, summary, checks, progress); break;
      case Task::ergodicity: task_ergodicity(cfg, art, summary, checks, progress); break;
      case Task::covariance: task_covariance(cfg, art, summary, checks, progress); break;
      case Task::whitenoise: task_whitenoise(cfg, art, summary, checks, progress); break;
    }
    summary["checks"] = checks.list;
    summary["all_hard_checks_pass"] = !checks.failed();
    art.write("summary.json", summary.dump(2) + "\n");
    if (checks.failed()) {
      result.exit_code = kExitValidationFailed;
      result.message = "check failed: " + checks.first_failure;
    }
  } catch (const ConfigError& e) {
    result.exit_code = kExitSchemaError;
    result.message = e.what();
    if (const auto* se = dynamic_cast<const SchemaError*>(&e)) manifest["error_path"] = se->path();
  } catch (const ValidationError& e) {
    result.exit_code = kExitValidationFailed;
    result.message = e.what();
  } catch (const NumericError& e) {
    result.exit_code = kExitNumericDivergence;
    result.message = e.what();
    std::size_t step = progress.step + 1;
    if (const auto* se = dynamic_cast<const StepError*>(&e)) step = se->step();
    manifest["failing_stage"] = progress.stage;
    manifest["failing_step"] = step;
  } catch (const std::exception& e) {
    result.exit_code = kExitValidationFailed;
    result.message = std::string("unexpected error: ") + e.what();
  }

  result.status = status_name(result.exit_code);
  result.summary = summary;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest["status"] = result.status;
  manifest["exit_code"] = result.exit_code;
  if (!result.message.empty()) manifest["error"] = result.message;
  manifest["wall_clock_seconds"] = wall;
  manifest["artifacts"] = art.names();
  try {
    write_manifest(result.output_dir, manifest);
  } catch (const std::exception& e) {
    if (result.exit_code == kExitOk) result.exit_code = kExitSchemaError;
    result.message = e.what();
    result.status = status_name(result.exit_code);
  }
  return result;
}

RunResult run_config_file(const std::filesystem::path& config, const RunOverrides& overrides, bool validate_only) {
  const auto start = std::chrono::steady_clock::now();
  Json doc;
  std::string output_dir = overrides.output_dir.value_or("out");
  try {
    std::ifstream in(config);
    if (!in) throw SchemaError("", "cannot open config file '" + config.string() + "'");
    try {
      doc = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw SchemaError("", std::string("invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw SchemaError("", "expected an object");
    if (overrides.seed) doc["seed"] = *overrides.seed;
    if (overrides.output_dir) {
      doc["output_dir"] = *overrides.output_dir;
    } else if (doc.contains("output_dir") && doc["output_dir"].is_string()) {
      output_dir = doc["output_dir"].get<std::string>();
    }
    const auto cfg = parse_config(doc);
    return run_experiment(cfg, validate_only);
  } catch (const std::exception& e) {
    RunResult r;
    r.exit_code = kExitSchemaError;
    r.status = status_name(r.exit_code);
    r.message = e.what();
    r.output_dir = output_dir;
    std::uint64_t seed = 0;
    if (doc.is_object() && doc.contains("seed") && doc["seed"].is_number_unsigned()) seed = doc["seed"].get<std::uint64_t>();
    std::string task = validate_only ? "validate" : "unknown";
    if (!validate_only && doc.is_object() && doc.contains("task") && doc["task"].is_string()) {
      task = doc["task"].get<std::string>();
    }
    Json manifest = base_manifest(doc, seed, task);
    manifest["status"] = r.status;
    manifest["exit_code"] = r.exit_code;
    manifest["error"] = r.message;
    if (const auto* se = dynamic_cast<const SchemaError*>(&e)) manifest["error_path"] = se->path();
    manifest["wall_clock_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest["artifacts"] = Json::array();
    try {
      write_manifest(output_dir, manifest);
    } catch (const std::exception&) {
      // Nowhere to record it; the exit code still reports the failure.
    }
    return r;
  }
}

RunResult emit_plotdata(const std::filesystem::path& dir) {
  RunResult r;
  r.output_dir = dir;
  const auto manifest_path = dir / "manifest.json";
  Json manifest;
  try {
    std::ifstream in(manifest_path);
    if (!in) throw ConfigError("no manifest.json in " + dir.string());
    manifest = Json::parse(in);
  } catch (const std::exception& e) {
    r.exit_code = kExitSchemaError;
    r.status = status_name(r.exit_code);
    r.message = e.what();
    return r;
  }

  std::ostringstream out;
  out << "series,t,value,stderr\n";
  std::size_t rows = 0;
  try {
    for (const auto& a : manifest.value("artifacts", Json::array())) {
      const auto name = a.get<std::string>();
      const std::filesystem::path p(name);
      if (p.extension() != ".csv" || name == "plotdata.csv" || name == "observations.csv") continue;
      const auto table = read_csv_file(dir / p);
      const std::string stem = p.stem().string();
      for (std::size_t c = 1; c < table.header.size(); ++c) {
        const auto& col = table.header[c];
        if (col.size() > 3 && col.ends_with("_se")) continue;
        std::optional<std::size_t> se_col;
        for (std::size_t k = 1; k < table.header.size(); ++k) {
          if (table.header[k] == col + "_se") se_col = k;
        }
        for (const auto& row : table.rows) {
          out << stem << '/' << col << ',' << row[0] << ',' << row[c] << ',' << (se_col ? row[*se_col] : "") << '\n';
          ++rows;
        }
      }
    }
    write_text_file(dir / "plotdata.csv", out.str());
  } catch (const std::exception& e) {
    r.exit_code = kExitSchemaError;
    r.status = status_name(r.exit_code);
    r.message = e.what();
    return r;
  }
  r.status = status_name(r.exit_code);
  r.summary = {{"rows", rows}, {"file", (dir / "plotdata.csv").string()}};
  return r;
}

}  // namespace spinfilter
