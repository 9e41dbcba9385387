#include "spinfilter/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "spinfilter/errors.hpp"
#include "spinfilter/rng.hpp"

namespace spinfilter {
namespace {

// Schema walker that remembers where it is in the document.
class Node {
 public:
  Node(const Json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  [[nodiscard]] const std::string& path() const { return path_; }
  [[nodiscard]] const Json& json() const { return *j_; }

  [[noreturn]] void fail(const std::string& msg) const { throw SchemaError(path_, msg); }

  void expect_object() const {
    if (!j_->is_object()) fail("expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    expect_object();
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_->items()) {
      if (!ok.count(k)) Node(v, path_ + "/" + k).fail("unknown key");
    }
  }

  [[nodiscard]] bool has(const char* key) const { return j_->is_object() && j_->contains(key); }

  [[nodiscard]] Node at(const char* key) const {
    expect_object();
    if (!j_->contains(key)) Node(*j_, path_ + "/" + key).fail("required key missing");
    return Node((*j_)[key], path_ + "/" + key);
  }

  [[nodiscard]] std::optional<Node> opt(const char* key) const {
    if (!has(key) || (*j_)[key].is_null()) return std::nullopt;
    return Node((*j_)[key], path_ + "/" + key);
  }

  [[nodiscard]] Node item(std::size_t i) const { return Node((*j_)[i], path_ + "/" + std::to_string(i)); }

  [[nodiscard]] double number() const {
    if (!j_->is_number()) fail("expected a number");
    const double v = j_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  [[nodiscard]] double positive() const {
    const double v = number();
    if (!(v > 0.0)) fail("must be > 0");
    return v;
  }
  [[nodiscard]] std::int64_t integer() const {
    if (!j_->is_number_integer()) fail("expected an integer");
    return j_->get<std::int64_t>();
  }
  [[nodiscard]] std::size_t count(std::size_t min = 0) const {
    const auto v = integer();
    if (v < static_cast<std::int64_t>(min)) fail("must be >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
  }
  [[nodiscard]] std::uint64_t seed() const {
    if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<std::int64_t>() >= 0)) {
      fail("expected a non-negative integer");
    }
    return j_->get<std::uint64_t>();
  }
  [[nodiscard]] std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  [[nodiscard]] bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  [[nodiscard]] std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }
  [[nodiscard]] std::vector<double> numbers() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(item(i).number());
    return out;
  }

 private:
  const Json* j_;
  std::string path_;
};

double number_or(const Node& n, const char* key, double fallback) {
  const auto v = n.opt(key);
  return v ? v->number() : fallback;
}

std::size_t count_or(const Node& n, const char* key, std::size_t fallback, std::size_t min = 0) {
  const auto v = n.opt(key);
  return v ? v->count(min) : fallback;
}

template <class F>
auto guarded(const Node& n, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const SchemaError&) {
    throw;
  } catch (const ConfigError& e) {
    n.fail(e.what());
  } catch (const ValidationError& e) {
    n.fail(e.what());
  }
}

LatticeSpec parse_lattice(const Node& n) {
  n.allow({"d", "N", "boundary", "weight", "s"});
  const auto d = static_cast<int>(n.at("d").count(1));
  const auto radius = static_cast<int>(n.at("N").count(0));
  Boundary boundary = Boundary::periodic;
  if (const auto b = n.opt("boundary")) {
    const auto s = b->string();
    if (s == "periodic") {
      boundary = Boundary::periodic;
    } else if (s == "zero" || s == "dirichlet") {
      boundary = Boundary::zero;
    } else {
      b->fail("expected 'periodic' or 'zero'");
    }
  }
  WeightSpec weight{WeightKind::uniform, 1.0, 2.0};
  if (const auto w = n.opt("weight")) {
    w->allow({"kind", "kappa", "r"});
    const auto kind = w->at("kind").string();
    if (kind == "uniform") {
      weight.kind = WeightKind::uniform;
    } else if (kind == "exponential") {
      weight.kind = WeightKind::exponential;
    } else if (kind == "polynomial") {
      weight.kind = WeightKind::polynomial;
    } else {
      w->at("kind").fail("expected 'uniform', 'exponential' or 'polynomial'");
    }
    weight.kappa = number_or(*w, "kappa", 1.0);
    weight.r = number_or(*w, "r", static_cast<double>(d) + 1.0);
  }
  const auto s = n.opt("s") ? static_cast<int>(n.at("s").count(1)) : 1;
  return guarded(n, [&] { return LatticeSpec(d, radius, boundary, weight, s); });
}

InteractionOperator parse_interaction(const Node& n, const LatticeSpec& lattice) {
  n.allow({"laplacian_alpha", "stencil", "entries", "range"});
  const int forms = static_cast<int>(n.has("laplacian_alpha")) + static_cast<int>(n.has("stencil")) +
                    static_cast<int>(n.has("entries"));
  if (forms != 1) n.fail("give exactly one of laplacian_alpha, stencil, entries");
  if (const auto a = n.opt("laplacian_alpha")) {
    const double alpha = a->number();
    return guarded(n, [&] { return build_discrete_laplacian(lattice, alpha); });
  }
  if (const auto st = n.opt("stencil")) {
    std::vector<StencilTerm> terms;
    for (std::size_t i = 0; i < st->size(); ++i) {
      const auto t = st->item(i);
      t.allow({"offset", "value"});
      StencilTerm term;
      const auto off = t.at("offset");
      for (std::size_t k = 0; k < off.size(); ++k) term.offset.push_back(static_cast<int>(off.item(k).integer()));
      if (term.offset.size() != static_cast<std::size_t>(lattice.dim())) off.fail("offset length must equal d");
      term.value = t.at("value").number();
      terms.push_back(std::move(term));
    }
    return guarded(n, [&] { return build_stencil_operator(lattice, terms); });
  }
  const auto e = n.at("entries");
  std::vector<MatrixEntry> entries;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const auto it = e.item(i);
    MatrixEntry m{};
    if (it.json().is_array()) {
      if (it.size() != 3) it.fail("expected [row, col, value]");
      m.row = it.item(0).count();
      m.col = it.item(1).count();
      m.value = it.item(2).number();
    } else {
      it.allow({"row", "col", "value"});
      m.row = it.at("row").count();
      m.col = it.at("col").count();
      m.value = it.at("value").number();
    }
    if (m.row >= lattice.site_count() || m.col >= lattice.site_count()) it.fail("site index outside the lattice");
    entries.push_back(m);
  }
  const double range = n.opt("range") ? n.at("range").number() : 0.0;
  if (range < 0.0) n.at("range").fail("must be >= 0");
  return guarded(n, [&] { return InteractionOperator(lattice, entries, range); });
}

Model parse_model(const Node& n) {
  n.allow({"lattice", "interaction", "drift", "noise"});
  auto lattice = parse_lattice(n.at("lattice"));
  auto interaction = parse_interaction(n.at("interaction"), lattice);
  DriftSpec drift;
  if (const auto d = n.opt("drift")) {
    d->allow({"f0_coeffs", "f1_c"});
    std::vector<double> coeffs;
    if (const auto c = d->opt("f0_coeffs")) coeffs = c->numbers();
    const double f1 = number_or(*d, "f1_c", 0.0);
    drift = guarded(*d, [&] { return DriftSpec(Polynomial(coeffs), f1); });
    if (!drift.dissipative()) {
      d->at("f0_coeffs").fail("f0 is not dissipative (needs odd degree with negative leading coefficient)");
    }
  }
  NoiseSpec noise{{1.0}, 1.0, 0.0};
  if (const auto ns = n.opt("noise")) {
    ns->allow({"b_diag", "sigma1", "sigma2"});
    if (const auto b = ns->opt("b_diag")) noise.b_diag = b->numbers();
    noise.sigma1 = number_or(*ns, "sigma1", 1.0);
    noise.sigma2 = number_or(*ns, "sigma2", 0.0);
    guarded(*ns, [&] {
      noise.validate(lattice.site_count());
      return 0;
    });
  }
  return Model{std::move(lattice), std::move(interaction), std::move(drift), std::move(noise)};
}

CylindricalFunction parse_function(const Node& n, std::size_t sites) {
  n.allow({"shape", "site", "direction", "name"});
  const auto shape_node = n.at("shape");
  const Shape shape = guarded(shape_node, [&] { return parse_shape(shape_node.string()); });
  if (n.has("site") && n.has("direction")) n.fail("give site or direction, not both");
  if (const auto d = n.opt("direction")) {
    auto dir = d->numbers();
    if (dir.size() != sites) d->fail("direction length must equal the site count");
    std::string name = n.opt("name") ? n.at("name").string() : std::string();
    return guarded(n, [&] { return CylindricalFunction(shape, dir, name); });
  }
  const std::size_t site = n.opt("site") ? n.at("site").count() : 0;
  if (site >= sites) n.at("site").fail("site outside the lattice");
  auto f = CylindricalFunction::at_site(shape, site, sites);
  if (const auto name = n.opt("name")) return CylindricalFunction(shape, f.direction(), name->string());
  return f;
}

}  // namespace

Task parse_task(const std::string& name) {
  if (name == "validate") return Task::validate;
  if (name == "simulate") return Task::simulate;
  if (name == "filter") return Task::filter;
  if (name == "ergodicity") return Task::ergodicity;
  if (name == "covariance") return Task::covariance;
  if (name == "whitenoise") return Task::whitenoise;
  throw ConfigError("unknown task '" + name + "'");
}

std::string task_name(Task task) {
  switch (task) {
    case Task::validate: return "validate";
    case Task::simulate: return "simulate";
    case Task::filter: return "filter";
    case Task::ergodicity: return "ergodicity";
    case Task::covariance: return "covariance";
    case Task::whitenoise: return "whitenoise";
  }
  return "?";
}

const Model& ExperimentConfig::require_model() const {
  if (!model) throw SchemaError("/model", "required key missing");
  return *model;
}

const SensorSpec& ExperimentConfig::require_sensor() const {
  if (!sensor) throw SchemaError("/sensor", "required for this task");
  return *sensor;
}

FilteringProblem ExperimentConfig::problem() const {
  FilteringProblem p{require_model(), require_sensor(), sim.dt, dt_obs, sim.scheme};
  p.validate();
  return p;
}

Json sensor_to_json(const SensorSpec& sensor) {
  Json j;
  if (sensor.kind() == SensorKind::linear) {
    j["kind"] = "linear";
    j["channels"] = sensor.channels();
    j["weights"] = sensor.weights();
  } else {
    j["kind"] = "componentwise";
    j["g_coeffs"] = sensor.g().coefficients();
    j["sites"] = sensor.sites();
  }
  return j;
}

SensorSpec sensor_from_json(const Json& doc, std::size_t sites, const std::string& path) {
  const Node n(doc, path);
  n.allow({"kind", "channels", "weights", "g_coeffs", "sites"});
  const auto kind = n.at("kind").string();
  SensorSpec s;
  if (kind == "identity") {
    s = SensorSpec::identity(sites);
  } else if (kind == "null") {
    s = SensorSpec::null(count_or(n, "channels", 1, 1), sites);
  } else if (kind == "linear") {
    const auto ch = n.at("channels").count(1);
    auto w = n.at("weights").numbers();
    if (w.size() != ch * sites) n.at("weights").fail("expected channels x sites values");
    s = guarded(n, [&] { return SensorSpec::linear(std::move(w), ch); });
  } else if (kind == "componentwise") {
    const auto g = n.at("g_coeffs").numbers();
    std::vector<std::size_t> idx;
    if (const auto st = n.opt("sites")) {
      for (std::size_t i = 0; i < st->size(); ++i) idx.push_back(st->item(i).count());
    } else {
      for (std::size_t i = 0; i < sites; ++i) idx.push_back(i);
    }
    s = guarded(n, [&] { return SensorSpec::componentwise(Polynomial(g), idx); });
  } else {
    n.at("kind").fail("expected identity, null, linear or componentwise");
  }
  guarded(n, [&] {
    s.validate(sites);
    return 0;
  });
  return s;
}

ExperimentConfig parse_config(const Json& doc) {
  const Node root(doc, "");
  root.allow({"task", "seed", "output_dir", "model", "sim", "sensor", "observation", "prior", "filter", "dictionary",
              "ks", "ergodicity", "covariance", "whitenoise", "description"});
  ExperimentConfig cfg;
  cfg.raw = doc;
  {
    const auto t = root.at("task");
    cfg.task = guarded(t, [&] { return parse_task(t.string()); });
  }
  if (const auto s = root.opt("seed")) cfg.seed = s->seed();
  if (const auto o = root.opt("output_dir")) cfg.output_dir = o->string();
  if (const auto m = root.opt("model")) cfg.model = parse_model(*m);
  if (cfg.task != Task::validate || root.has("model")) (void)cfg.require_model();
  const std::size_t sites = cfg.model->site_count();

  cfg.sim.seed = cfg.seed;
  if (const auto s = root.opt("sim")) {
    s->allow({"dt", "T", "scheme", "save_stride", "x0"});
    cfg.sim.dt = s->opt("dt") ? s->at("dt").positive() : cfg.sim.dt;
    cfg.sim.horizon = s->opt("T") ? s->at("T").number() : cfg.sim.horizon;
    if (const auto sc = s->opt("scheme")) {
      const auto name = sc->string();
      if (name == "split_step") {
        cfg.sim.scheme = Scheme::split_step;
      } else if (name == "explicit_em" || name == "tamed_em") {
        cfg.sim.scheme = Scheme::explicit_em;
      } else {
        sc->fail("expected 'split_step' or 'explicit_em'");
      }
    }
    cfg.sim.save_stride = count_or(*s, "save_stride", 1, 1);
    if (const auto x = s->opt("x0")) {
      cfg.x0 = x->numbers();
      if (cfg.x0.size() == 1 && sites > 1) cfg.x0.assign(sites, cfg.x0[0]);
      if (cfg.x0.size() != sites) x->fail("x0 length must be 1 or the site count");
    }
    guarded(*s, [&] {
      cfg.sim.validate();
      return 0;
    });
  }
  if (cfg.x0.empty()) cfg.x0.assign(sites, 0.0);

  if (const auto s = root.opt("sensor")) cfg.sensor = sensor_from_json(s->json(), sites, s->path());
  if (const auto o = root.opt("observation")) {
    o->allow({"dt_obs"});
    cfg.dt_obs = o->at("dt_obs").positive();
    guarded(*o, [&] { return substeps_per_observation(cfg.sim.dt, cfg.dt_obs); });
  }
  if (const auto p = root.opt("prior")) {
    p->allow({"mean", "std"});
    if (const auto m = p->opt("mean")) cfg.prior.mean = m->numbers();
    if (const auto sd = p->opt("std")) cfg.prior.std = sd->numbers();
    for (const auto* v : {&cfg.prior.mean, &cfg.prior.std}) {
      if (v->size() != 1 && v->size() != sites) p->fail("prior vectors need length 1 or the site count");
    }
    for (double sd : cfg.prior.std) {
      if (sd < 0.0) p->at("std").fail("must be >= 0");
    }
  }
  cfg.filter.seed = CounterRng(cfg.seed).fork(0x46494C).seed();
  if (const auto f = root.opt("filter")) {
    f->allow({"n_particles", "resample_threshold", "resampling"});
    cfg.filter.n_particles = count_or(*f, "n_particles", cfg.filter.n_particles, 1);
    if (const auto th = f->opt("resample_threshold")) {
      cfg.filter.resample_threshold = th->number();
      if (!(cfg.filter.resample_threshold > 0.0 && cfg.filter.resample_threshold <= 1.0)) th->fail("must lie in (0, 1]");
    }
    if (const auto r = f->opt("resampling")) {
      const auto name = r->string();
      if (name == "systematic") {
        cfg.filter.resampling = Resampling::systematic;
      } else if (name == "multinomial") {
        cfg.filter.resampling = Resampling::multinomial;
      } else {
        r->fail("expected 'systematic' or 'multinomial'");
      }
    }
    guarded(*f, [&] {
      cfg.filter.validate();
      return 0;
    });
  }
  if (const auto d = root.opt("dictionary")) {
    for (std::size_t i = 0; i < d->size(); ++i) cfg.dictionary.push_back(parse_function(d->item(i), sites));
  } else {
    cfg.dictionary.push_back(CylindricalFunction::at_site(Shape::identity, 0, sites));
    cfg.dictionary.push_back(CylindricalFunction::at_site(Shape::square, 0, sites));
  }
  if (const auto k = root.opt("ks")) {
    k->allow({"n_paths"});
    cfg.filter_task.ks_paths = count_or(*k, "n_paths", 0);
  }
  if (const auto e = root.opt("ergodicity")) {
    e->allow({"x0", "t_grid", "t_max", "t_step", "n_mc", "phi", "invariant", "mu_oracle", "barycenter_horizon"});
    auto& eo = cfg.ergodicity;
    if (const auto x = e->opt("x0")) {
      eo.x0 = x->numbers();
      if (eo.x0.size() == 1 && sites > 1) eo.x0.assign(sites, eo.x0[0]);
      if (eo.x0.size() != sites) x->fail("x0 length must be 1 or the site count");
    } else {
      eo.x0.assign(sites, 1.0);
    }
    if (const auto g = e->opt("t_grid")) {
      eo.t_grid = g->numbers();
    } else {
      const double t_max = e->opt("t_max") ? e->at("t_max").positive() : 5.0;
      const double step = e->opt("t_step") ? e->at("t_step").positive() : 0.25;
      const auto n = static_cast<std::size_t>(std::llround(t_max / step));
      for (std::size_t i = 0; i <= n; ++i) eo.t_grid.push_back(static_cast<double>(i) * step);
    }
    eo.n_mc = count_or(*e, "n_mc", eo.n_mc, 2);
    eo.phi = e->opt("phi") ? parse_function(e->at("phi"), sites) : CylindricalFunction::at_site(Shape::identity, 0, sites);
    if (const auto inv = e->opt("invariant")) {
      inv->allow({"horizon", "burn_in", "n_chains", "spread", "batches", "sample_every"});
      eo.invariant.horizon = number_or(*inv, "horizon", eo.invariant.horizon);
      eo.invariant.burn_in = number_or(*inv, "burn_in", eo.invariant.burn_in);
      eo.invariant.n_chains = count_or(*inv, "n_chains", eo.invariant.n_chains, 1);
      eo.invariant.spread = number_or(*inv, "spread", eo.invariant.spread);
      eo.invariant.batches = count_or(*inv, "batches", eo.invariant.batches, 2);
      eo.invariant.sample_every = count_or(*inv, "sample_every", eo.invariant.sample_every, 1);
    }
    if (const auto mu = e->opt("mu_oracle")) eo.mu_oracle = mu->number();
    eo.barycenter_horizon = number_or(*e, "barycenter_horizon", 0.0);
  }
  if (const auto c = root.opt("covariance")) {
    c->allow({"f", "g", "replicas", "horizon"});
    auto& co = cfg.covariance;
    co.f = c->opt("f") ? parse_function(c->at("f"), sites) : CylindricalFunction::at_site(Shape::identity, 0, sites);
    co.g = c->opt("g") ? parse_function(c->at("g"), sites) : *co.f;
    co.options.replicas = count_or(*c, "replicas", co.options.replicas, 2);
    co.options.horizon = c->opt("horizon") ? c->at("horizon").positive() : co.options.horizon;
  }
  if (const auto w = root.opt("whitenoise")) {
    w->allow({"n_mc", "eps", "replicas"});
    auto& wo = cfg.whitenoise;
    wo.n_mc = count_or(*w, "n_mc", wo.n_mc, 2);
    if (const auto e = w->opt("eps")) {
      wo.eps = e->numbers();
      for (std::size_t i = 1; i < wo.eps.size(); ++i) {
        if (!(wo.eps[i] < wo.eps[i - 1])) e->fail("eps must be strictly decreasing");
      }
    }
    wo.replicas = count_or(*w, "replicas", wo.replicas, 2);
  }

  const bool needs_sensor =
      cfg.task == Task::filter || cfg.task == Task::covariance || cfg.task == Task::whitenoise;
  if (needs_sensor && !cfg.sensor) throw SchemaError("/sensor", "required for task " + task_name(cfg.task));
  if (cfg.sensor) {
    guarded(root, [&] {
      cfg.require_model().noise.validate(sites, cfg.sensor->channels());
      return 0;
    });
  }
  if (cfg.task == Task::filter || cfg.task == Task::covariance || cfg.task == Task::whitenoise) {
    guarded(root, [&] { return cfg.problem(); });
  }
  if (cfg.task == Task::simulate || cfg.task == Task::filter) {
    if (!root.has("sim")) throw SchemaError("/sim", "required for task " + task_name(cfg.task));
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("", "cannot open config file '" + path + "'");
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

}  // namespace spinfilter
