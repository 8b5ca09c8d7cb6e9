#include "kwass/scenario.hpp"

#include "kwass/ensemble_io.hpp"
#include "kwass/errors.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

namespace kwass {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config reading.

json toml_to_json(const toml::node& node, const std::string& path) {
  switch (node.type()) {
    case toml::node_type::table: {
      json j = json::object();
      for (auto&& [key, value] : *node.as_table()) {
        const std::string k(key.str());
        j[k] = toml_to_json(value, path.empty() ? k : path + "." + k);
      }
      return j;
    }
    case toml::node_type::array: {
      json j = json::array();
      std::size_t i = 0;
      for (auto&& value : *node.as_array()) j.push_back(toml_to_json(value, path + "[" + std::to_string(i++) + "]"));
      return j;
    }
    case toml::node_type::string: return *node.value<std::string>();
    case toml::node_type::integer: return *node.value<std::int64_t>();
    case toml::node_type::floating_point: return *node.value<double>();
    case toml::node_type::boolean: return *node.value<bool>();
    default: throw ConfigError(path, "unsupported value type");
  }
}

// Typed access to one table with path-qualified errors and unknown-key detection.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "must be a table");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }
  void mark(const std::string& key) { used_.insert(key); }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return as_number(raw(key), at(key));
  }
  double required_number(const std::string& key) {
    if (!has(key)) throw ConfigError(at(key), "is required");
    return number(key, 0.0);
  }
  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "must be an integer");
    return v.get<std::int64_t>();
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "must be true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed = {}) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key), "must be a string");
    std::string s = v.get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(at(key), "must be one of {" + list + "}, got '" + s + "'");
    }
    return s;
  }
  std::vector<double> numbers(const std::string& key) {
    const json& v = raw(key);
    if (v.is_number()) return {as_number(v, at(key))};
    if (!v.is_array()) throw ConfigError(at(key), "must be a number or an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], at(key) + "[" + std::to_string(i) + "]"));
    return out;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(at(it.key()), "unknown key");
    }
  }

 private:
  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
    return d;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

std::vector<json> table_list(const json& root, const std::string& key) {
  if (!root.contains(key)) return {};
  const json& v = root.at(key);
  if (v.is_object()) return {v};
  if (!v.is_array()) throw ConfigError(key, "must be a table or an array of tables");
  return {v.begin(), v.end()};
}

Scenario parse_json(const json& root, const std::string& fallback_name) {
  Scenario sc;
  Section top(root, "");
  sc.name = top.string("name", fallback_name);
  top.string("description", "");
  const std::int64_t seed = top.integer("seed", 0);
  require(seed >= 0, "seed", "must be >= 0");
  sc.seed = static_cast<std::uint64_t>(seed);

  // [sim]
  require(top.has("sim"), "sim", "is required");
  Section sim(top.raw("sim"), "sim");
  const std::string mode = sim.string("mode", "", {"free", "kernel", "poisson"});
  require(!mode.empty(), "sim.mode", "is required");
  sc.sim.dt = sim.required_number("dt");
  require(sc.sim.dt > 0.0, "sim.dt", "must be > 0");
  sc.sim.t_end = sim.required_number("t_end");
  require(sc.sim.t_end >= 0.0, "sim.t_end", "must be >= 0");
  const std::int64_t n = sim.integer("N", 0);
  require(n >= 1, "sim.N", "must be >= 1");
  sc.sim.N = static_cast<Index>(n);
  // Default: about 20 snapshots, rounded to a whole number of steps.
  const double default_snap =
      sc.sim.dt * std::max(1.0, std::round(sc.sim.t_end / sc.sim.dt / 20.0));
  sc.sim.snap_every = sim.number("snap_every", default_snap);
  sc.sim.integrator = sim.string("integrator", "leapfrog", {"leapfrog"});
  sc.sim.seed = sc.seed;
  if (mode == "free") {
    sc.sim.mode = FreeMode{};
  } else if (mode == "kernel") {
    const std::string kernel = sim.string("kernel", "", {"zero", "single_mode", "sum_of_modes"});
    require(!kernel.empty(), "sim.kernel", "is required in kernel mode");
    KernelMode km;
    if (kernel == "zero") {
      km.kernel = KernelSpec::zero();
    } else if (kernel == "single_mode") {
      const double B = sim.required_number("B");
      require(B >= 0.0, "sim.B", "must be >= 0");
      km.kernel = KernelSpec::single_mode(B);
    } else {
      require(sim.has("coefficients"), "sim.coefficients", "is required for sum_of_modes");
      km.kernel = KernelSpec::sum_of_modes(sim.numbers("coefficients"));
    }
    sc.sim.mode = km;
  } else {
    PoissonMode pm;
    const std::int64_t grid = sim.integer("grid", 256);
    require(grid >= 4, "sim.grid", "must be >= 4");
    pm.grid = static_cast<int>(grid);
    sc.eps_sweep = sim.has("eps") ? sim.numbers("eps") : std::vector<double>{1.0};
    require(!sc.eps_sweep.empty(), "sim.eps", "must not be empty");
    for (std::size_t i = 0; i < sc.eps_sweep.size(); ++i) {
      const double e = sc.eps_sweep[i];
      require(e > 0.0 && e <= 1.0, sc.eps_sweep.size() > 1 ? "sim.eps[" + std::to_string(i) + "]" : "sim.eps",
              "must lie in (0, 1]");
    }
    pm.eps = sc.eps_sweep.front();
    sc.sim.mode = pm;
  }
  sim.finish();
  sc.sim.validate();

  // [initial]
  if (top.has("initial")) {
    Section in(top.raw("initial"), "initial");
    const std::int64_t d = in.integer("d", 1);
    require(d >= 1 && d <= 3, "initial.d", "must be 1, 2 or 3");
    sc.initial.d = static_cast<int>(d);
    sc.initial.velocity = in.string("velocity", "gaussian", {"gaussian", "uniform", "zero"});
    sc.initial.sigma = in.number("sigma", 1.0);
    require(sc.initial.sigma >= 0.0, "initial.sigma", "must be >= 0");
    sc.initial.alpha = in.number("alpha", 0.0);
    require(sc.initial.alpha >= 0.0 && sc.initial.alpha < 1.0, "initial.alpha", "must lie in [0, 1)");
    const std::int64_t k = in.integer("k", 1);
    require(k >= 1, "initial.k", "must be >= 1");
    sc.initial.k = static_cast<int>(k);
    in.finish();
  }

  // [pair]
  if (top.has("pair")) {
    Section pr(top.raw("pair"), "pair");
    sc.pair.kind = pr.string("kind", "velocity_shift", {"velocity_shift", "position_shift", "resample"});
    sc.pair.delta = pr.number("delta", 1e-3);
    require(sc.pair.delta >= 0.0, "pair.delta", "must be >= 0");
    sc.pair.coupling =
        pr.string("coupling", sc.pair.kind == "resample" ? "optimal" : "index", {"index", "optimal"});
    sc.pair.coupling_p = pr.number("coupling_p", 1.0);
    require(sc.pair.coupling_p >= 1.0, "pair.coupling_p", "must be >= 1");
    pr.finish();
  }

  // [[distance]]
  const auto distances = table_list(root, "distance");
  top.mark("distance");
  for (std::size_t i = 0; i < distances.size(); ++i) {
    const std::string path = "distance[" + std::to_string(i) + "]";
    Section ds(distances[i], path);
    DistanceSpec spec;
    spec.variant = ds.string("variant", "plain", {"plain", "aniso", "quad", "shifted"});
    spec.p = ds.number("p", 1.0);
    require(spec.p >= 1.0, path + ".p", "must be >= 1");
    spec.lambda = ds.number("lambda", 1.0);
    if (ds.has("abc")) {
      const auto abc = ds.numbers("abc");
      require(abc.size() == 3, path + ".abc", "must hold three numbers a, b, c");
      spec.a = abc[0];
      spec.b = abc[1];
      spec.c = abc[2];
    }
    spec.t = ds.number("t", 0.0);
    spec.estimator = ds.string("estimator", "exact", {"exact", "entropic", "coupling"});
    spec.eta = ds.number("eta", 1e-3);
    require(spec.eta > 0.0, path + ".eta", "must be > 0");
    spec.name = ds.string("name", "W" + format_number(spec.p));
    try {
      (void)spec.cost();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
    ds.finish();
    for (const auto& other : sc.distances) require(other.name != spec.name, path + ".name", "duplicate name '" + spec.name + "'");
    sc.distances.push_back(spec);
  }

  // [q]
  if (top.has("q")) {
    Section qs(top.raw("q"), "q");
    sc.q.enabled = true;
    sc.q.weight = qs.string("weight", "log_eps", {"log_eps", "capped_phi"});
    qs.finish();
  }

  // [[bound]]
  const auto bounds = table_list(root, "bound");
  top.mark("bound");
  const bool poisson = std::holds_alternative<PoissonMode>(sc.sim.mode);
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const std::string path = "bound[" + std::to_string(i) + "]";
    Section bs(bounds[i], path);
    BoundSpec spec;
    const std::string kind = bs.string("kind", "");
    require(!kind.empty(), path + ".kind", "is required");
    try {
      spec.kind = parse_bound_kind(kind);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ".kind", e.what());
    }
    spec.has_B = bs.has("B");
    spec.params.B = bs.number("B", 0.0);
    require(spec.params.B >= 0.0, path + ".B", "must be >= 0");
    spec.has_eps = bs.has("eps");
    spec.params.eps = bs.number("eps", 1.0);
    spec.params.C_d = bs.number("C_d", 1.0);
    spec.params.c0 = bs.number("c0", 0.05);
    spec.params.C = bs.number("C", 1.0);
    spec.params.c_d = bs.number("c_d", 1.0);
    spec.distance = bs.string("distance", "");
    bs.finish();
    const bool needs_a = spec.kind == BoundKind::loeper_improved || spec.kind == BoundKind::R_of_t;
    require(!needs_a || poisson, path + ".kind", "needs poisson mode (density bound A(t))");
    require(spec.kind != BoundKind::R_of_t || sc.q.enabled, path + ".kind", "R_of_t needs a [q] section");
    if (spec.kind != BoundKind::R_of_t) {
      const double want_p =
          (spec.kind == BoundKind::loeper_classical || spec.kind == BoundKind::loeper_improved) ? 2.0 : 1.0;
      if (spec.distance.empty()) {
        for (const auto& d : sc.distances) {
          if (d.p == want_p) {
            spec.distance = d.name;
            break;
          }
        }
      }
      const bool found = std::any_of(sc.distances.begin(), sc.distances.end(),
                                     [&](const DistanceSpec& d) { return d.name == spec.distance; });
      require(found, path + ".distance", "needs a measured distance with p = " + format_number(want_p));
    }
    sc.bounds.push_back(spec);
  }

  // [verify]
  if (top.has("verify")) {
    Section vs(top.raw("verify"), "verify");
    VerifySpec v;
    v.measured = vs.string("measured", sc.distances.empty() ? "" : sc.distances.front().name);
    const std::string kind = vs.string("bound", "");
    require(!kind.empty(), "verify.bound", "is required");
    try {
      v.bound = parse_bound_kind(kind);
    } catch (const ConfigError& e) {
      throw ConfigError("verify.bound", e.what());
    }
    v.allowance = vs.number("allowance", 3.0);
    require(v.allowance >= 0.0, "verify.allowance", "must be >= 0");
    v.require_hypothesis = vs.boolean("require_hypothesis", false);
    vs.finish();
    const bool measured_ok =
        (v.measured == "Q" && sc.q.enabled) ||
        std::any_of(sc.distances.begin(), sc.distances.end(), [&](const DistanceSpec& d) { return d.name == v.measured; });
    require(measured_ok, "verify.measured", "must name a distance or be \"Q\" with a [q] section");
    require(std::any_of(sc.bounds.begin(), sc.bounds.end(), [&](const BoundSpec& b) { return b.kind == v.bound; }),
            "verify.bound", "must match one of the [[bound]] kinds");
    sc.verify = v;
  }
  top.finish();
  sc.canonical = root.dump(2);
  return sc;
}

// ---------------------------------------------------------------------------
// Output helpers.

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

// Writes files below root and remembers them so a failed run can be undone.
class OutputSet {
 public:
  explicit OutputSet(fs::path root) : root_(std::move(root)) {}

  void mkdir(const fs::path& rel) {
    const fs::path p = rel.empty() ? root_ : root_ / rel;
    std::vector<fs::path> fresh;
    for (fs::path q = p; !q.empty() && !fs::exists(q); q = q.parent_path()) fresh.push_back(q);
    fs::create_directories(p);
    dirs_.insert(dirs_.end(), fresh.begin(), fresh.end());
  }

  void write(const std::string& rel, const std::string& content) {
    const fs::path p = root_ / rel;
    mkdir(fs::path(rel).parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << content;
    out.close();
    if (!out) throw Error("failed writing " + p.string());
    files_.push_back(rel);
    contents_[rel] = content;
  }

  void rollback() noexcept {
    std::error_code ec;
    for (const auto& f : files_) fs::remove(root_ / f, ec);
    // Deepest first.
    std::sort(dirs_.begin(), dirs_.end(), [](const fs::path& a, const fs::path& b) {
      return a.string().size() > b.string().size();
    });
    for (const auto& d : dirs_) {
      if (fs::is_empty(d, ec)) fs::remove(d, ec);
    }
  }

  const std::vector<std::string>& files() const { return files_; }
  const std::string& content(const std::string& rel) const { return contents_.at(rel); }

 private:
  fs::path root_;
  std::vector<std::string> files_;
  std::vector<fs::path> dirs_;
  std::map<std::string, std::string> contents_;
};

std::string fmt(double v) { return format_number(v); }

WeightFunction weight_for(const QSpec& q, double eps) {
  return q.weight == "capped_phi" ? WeightFunction::capped_phi(eps) : WeightFunction::log_eps(eps);
}

double scenario_eps(const SimConfig& sim) {
  if (const auto* p = std::get_if<PoissonMode>(&sim.mode)) return p->eps;
  return 1.0;
}

double kernel_B(const SimConfig& sim) {
  if (const auto* k = std::get_if<KernelMode>(&sim.mode)) return k->kernel.hessian_bound();
  return 0.0;
}

struct Measured {
  std::vector<double> value;
  std::vector<double> sigma;
  std::vector<bool> converged;
};

std::string plot_script(bool has_q) {
  std::ostringstream s;
  s << "# gnuplot script over the CSV outputs of this run\n"
    << "set datafile separator ','\n"
    << "set terminal pngcairo size 900,600\n"
    << "set key autotitle columnhead left top\n"
    << "set xlabel 't'\n"
    << "set logscale y\n\n"
    << "set output 'report.png'\n"
    << "set title 'measured vs bound'\n"
    << "plot 'report.csv' using 1:2 with linespoints title 'measured', \\\n"
    << "     'report.csv' using 1:3 with lines title 'bound'\n\n"
    << "set output 'trajectory.png'\n"
    << "set title 'coupling moments'\n"
    << "plot 'trajectory.csv' using 1:4 with lines title 'int |dx|', \\\n"
    << "     'trajectory.csv' using 1:5 with lines title 'int |dv|'\n";
  if (has_q) {
    s << "\nset output 'q_series.png'\n"
      << "set title 'Q(t) and E(t)'\n"
      << "plot 'q_series.csv' using 1:4 with linespoints title 'Q', \\\n"
      << "     'q_series.csv' using 1:3 with lines title 'E'\n";
  }
  s << "\nunset logscale y\n"
    << "set output 'energy.png'\n"
    << "set title 'energy'\n"
    << "plot 'trajectory.csv' using 1:7 with lines title 'energy 1', \\\n"
    << "     'trajectory.csv' using 1:8 with lines title 'energy 2'\n";
  return s.str();
}

struct StageResult {
  bool pass = true;
  std::string summary;
};

// One complete pipeline for a fixed config; files go to prefix/.
StageResult run_stage(const Scenario& sc, const SimConfig& sim, const std::string& prefix, OutputSet& out) {
  auto rel = [&](const std::string& f) { return prefix.empty() ? f : prefix + "/" + f; };
  const double eps = scenario_eps(sim);

  const PhaseEnsemble mu0 = sample_initial(sc.initial, sim.N, sc.seed);
  const PhaseEnsemble nu0 = make_partner(mu0, sc.initial, sc.pair, sc.seed);
  const Coupling pi0 = initial_coupling(mu0, nu0, sc.pair);
  PairOptions popts;
  popts.store_snapshots = !sc.distances.empty();
  const PairedTrajectory traj = simulate_pair(sim, mu0, nu0, pi0, popts);
  const std::size_t nt = traj.times.size();

  {
    std::ostringstream s;
    write_trajectory_csv(s, traj);
    out.write(rel("trajectory.csv"), s.str());
  }

  // Distances at every snapshot.
  std::map<std::string, Measured> measured;
  {
    std::ostringstream s;
    s << "t,name,variant,p,params,estimator,value,sigma,converged\n";
    for (const auto& spec : sc.distances) {
      const CostSpec cost = spec.cost();
      Measured m;
      for (std::size_t k = 0; k < nt; ++k) {
        const PhaseEnsemble& a = traj.first[k];
        const PhaseEnsemble& b = traj.second[k];
        TransportResult r;
        if (spec.estimator == "coupling") {
          r.plan = pi0;
          r.raw_objective = plan_cost(pi0, a, b, cost);
          r.value = r.raw_objective <= 0.0 ? 0.0 : std::pow(r.raw_objective, 1.0 / spec.p);
        } else if (spec.estimator == "exact") {
          r = solve_exact(a, b, cost);
        } else {
          EntropicOptions eo;
          eo.eta = spec.eta;
          r = solve_entropic(a, b, cost, eo);
        }
        const double sigma = bootstrap_sigma(r.plan, a, b, cost, 200, sc.seed + k);
        m.value.push_back(r.value);
        m.sigma.push_back(sigma);
        m.converged.push_back(r.solver.converged);
        s << fmt(traj.times[k]) << ',' << spec.name << ',' << cost.name() << ',' << fmt(spec.p) << ','
          << cost.params() << ',' << spec.estimator << ',' << fmt(r.value) << ',' << fmt(sigma) << ','
          << (r.solver.converged ? "true" : "false") << '\n';
      }
      measured[spec.name] = std::move(m);
    }
    out.write(rel("distances.csv"), s.str());
  }

  // Q series.
  std::vector<QPoint> qs;
  bool q_ge_e = true;
  if (sc.q.enabled) {
    qs = compute_Q_series(traj, weight_for(sc.q, eps));
    std::ostringstream s;
    s << "t,D,E,Q,defined,degenerate,residual,Q_ge_E\n";
    for (const auto& p : qs) {
      const bool ge = !p.defined || p.q >= p.E;
      q_ge_e = q_ge_e && ge;
      s << fmt(p.t) << ',' << fmt(p.D) << ',' << fmt(p.E) << ',' << (p.defined ? fmt(p.q) : std::string("")) << ','
        << (p.defined ? "true" : "false") << ',' << (p.degenerate ? "true" : "false") << ',' << fmt(p.residual) << ','
        << (ge ? "true" : "false") << '\n';
    }
    out.write(rel("q_series.csv"), s.str());
  }

  // Bounds.
  std::vector<double> A(nt);
  for (std::size_t k = 0; k < nt; ++k) A[k] = traj.diagnostics[k].A;
  const std::vector<double> A_int = cumulative_trapezoid(traj.times, A);
  std::vector<BoundCurve> curves;
  {
    std::ostringstream s;
    s << "kind,t,value,hypothesis_ok\n";
    for (const auto& spec : sc.bounds) {
      BoundParams params = spec.params;
      if (!spec.has_B) params.B = kernel_B(sim);
      if (!spec.has_eps) params.eps = eps;
      if (!spec.distance.empty()) {
        const double d0 = measured.at(spec.distance).value.front();
        params.W10 = d0;
        params.W20 = d0;
      }
      if (spec.kind == BoundKind::R_of_t) {
        if (qs.empty() || !qs.front().defined) throw DomainError("R_of_t: Q(0) undefined");
        params.Q0 = qs.front().q;
      }
      BoundCurve curve = evaluate_bound(spec.kind, params, traj.times, A_int);
      for (std::size_t k = 0; k < nt; ++k) {
        s << bound_kind_name(curve.kind) << ',' << fmt(curve.times[k]) << ',' << fmt(curve.values[k]) << ','
          << (curve.hypothesis_ok[k] ? "true" : "false") << '\n';
      }
      curves.push_back(std::move(curve));
    }
    out.write(rel("bounds.csv"), s.str());
  }

  // Verdict.
  StageResult result;
  std::ostringstream verdict;
  verdict << "scenario: " << sc.name << '\n'
          << "mode: " << mode_name(sim.mode) << '\n';
  if (std::holds_alternative<PoissonMode>(sim.mode)) verdict << "eps: " << fmt(eps) << '\n';
  verdict << "particles: " << sim.N << ", dt: " << fmt(sim.dt) << ", t_end: " << fmt(sim.t_end)
          << ", snapshots: " << nt << '\n'
          << "seed: " << sc.seed << '\n';
  for (const auto& curve : curves) {
    verdict << "bound " << bound_kind_name(curve.kind) << ":";
    switch (curve.kind) {
      case BoundKind::dobrushin:
      case BoundKind::improved_free_flow:
      case BoundKind::combined:
        verdict << " B=" << fmt(curve.params.B) << " W10=" << fmt(curve.params.W10);
        break;
      case BoundKind::loeper_classical:
        verdict << " W20=" << fmt(curve.params.W20) << " C=" << fmt(curve.params.C) << " c_d=" << fmt(curve.params.c_d);
        break;
      case BoundKind::loeper_improved:
        verdict << " W20=" << fmt(curve.params.W20) << " eps=" << fmt(curve.params.eps) << " C_d="
                << fmt(curve.params.C_d) << " c0=" << fmt(curve.params.c0);
        break;
      case BoundKind::R_of_t:
        verdict << " Q0=" << fmt(curve.params.Q0) << " eps=" << fmt(curve.params.eps) << " C_d="
                << fmt(curve.params.C_d);
        break;
    }
    const auto ok = std::count(curve.hypothesis_ok.begin(), curve.hypothesis_ok.end(), true);
    verdict << " hypothesis_ok " << ok << "/" << nt << '\n';
  }
  if (sc.q.enabled) {
    verdict << "Q >= E at every defined snapshot: " << (q_ge_e ? "yes" : "no") << '\n';
    result.pass = result.pass && q_ge_e;
  }

  std::ostringstream report;
  report << "t,measured,bound,allowance,margin,hypothesis_ok,status\n";
  if (sc.verify) {
    const VerifySpec& v = *sc.verify;
    const BoundCurve& curve =
        *std::find_if(curves.begin(), curves.end(), [&](const BoundCurve& c) { return c.kind == v.bound; });
    std::vector<double> values(nt), allowance(nt);
    std::vector<bool> defined(nt, true);
    for (std::size_t k = 0; k < nt; ++k) {
      if (v.measured == "Q") {
        defined[k] = qs[k].defined;
        values[k] = qs[k].defined ? qs[k].q : 0.0;
        allowance[k] = 1e-9;
      } else {
        const Measured& m = measured.at(v.measured);
        values[k] = m.value[k];
        allowance[k] = (m.value[k] > 0.0 ? v.allowance * m.sigma[k] / m.value[k] : 0.0) + 1e-9;
      }
    }
    const StabilityReport rep = verify_bound(traj.times, values, curve, allowance);
    std::size_t checked = 0, failed = 0, skipped = 0;
    for (std::size_t k = 0; k < nt; ++k) {
      const bool hyp = curve.hypothesis_ok[k];
      const bool skip = !defined[k] || (v.require_hypothesis && !hyp);
      const bool ok = values[k] <= curve.values[k] * (1.0 + allowance[k]);
      const char* status = skip ? "skipped" : (ok ? "pass" : "fail");
      if (skip) {
        ++skipped;
      } else {
        ++checked;
        failed += ok ? 0 : 1;
      }
      report << fmt(rep.times[k]) << ',' << fmt(values[k]) << ',' << fmt(curve.values[k]) << ','
             << fmt(allowance[k]) << ',' << fmt(rep.margin[k]) << ',' << (hyp ? "true" : "false") << ',' << status
             << '\n';
    }
    verdict << "verify " << v.measured << " <= " << bound_kind_name(v.bound);
    if (v.measured == "Q") {
      verdict << " (relative allowance 1e-9)";
    } else {
      verdict << " (allowance " << fmt(v.allowance) << " bootstrap sigma)";
    }
    verdict << ": checked " << checked << ", failed " << failed << ", skipped " << skipped << '\n';
    result.pass = result.pass && failed == 0;
  }
  out.write(rel("report.csv"), report.str());
  verdict << "verdict: " << (result.pass ? "PASS" : "FAIL") << '\n';
  out.write(rel("verdict.txt"), verdict.str());
  out.write(rel("plot.gp"), plot_script(sc.q.enabled));
  result.summary = verdict.str();
  return result;
}

std::vector<SimConfig> stage_configs(const Scenario& sc, std::vector<std::string>& prefixes) {
  std::vector<SimConfig> out;
  if (std::holds_alternative<PoissonMode>(sc.sim.mode) && sc.eps_sweep.size() > 1) {
    for (double e : sc.eps_sweep) {
      SimConfig cfg = sc.sim;
      std::get<PoissonMode>(cfg.mode).eps = e;
      out.push_back(cfg);
      prefixes.push_back("eps_" + format_number(e));
    }
  } else {
    out.push_back(sc.sim);
    prefixes.emplace_back();
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

CostSpec DistanceSpec::cost() const {
  if (variant == "plain") return CostSpec::plain(p);
  if (variant == "aniso") return CostSpec::anisotropic(p, lambda);
  if (variant == "quad") return CostSpec::quadratic(p, a, b, c);
  if (variant == "shifted") return CostSpec::shifted(p, t);
  throw std::invalid_argument("unknown cost variant '" + variant + "'");
}

Scenario parse_scenario_text(const std::string& text, bool is_json, const std::string& name) {
  json root;
  if (is_json) {
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("", std::string("invalid JSON: ") + e.what());
    }
  } else {
    try {
      const toml::table table = toml::parse(text);
      root = toml_to_json(table, "");
    } catch (const toml::parse_error& e) {
      std::ostringstream msg;
      msg << "invalid TOML at line " << e.source().begin.line << ": " << e.description();
      throw ConfigError("", msg.str());
    }
  }
  return parse_json(root, name);
}

Scenario load_scenario(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  const std::string ext = file.extension().string();
  if (ext != ".toml" && ext != ".json") throw ConfigError("", "config must be .toml or .json: " + file.string());
  return parse_scenario_text(text.str(), ext == ".json", file.stem().string());
}

std::vector<std::string> validate_config(const fs::path& file) {
  const Scenario sc = load_scenario(file);
  std::vector<std::string> notes;
  notes.push_back(sc.name + ": ok (" + mode_name(sc.sim.mode) + " mode, N=" + std::to_string(sc.sim.N) + ", " +
                  std::to_string(sc.sim.steps()) + " steps, " + std::to_string(sc.distances.size()) + " distances, " +
                  std::to_string(sc.bounds.size()) + " bounds)");
  if (sc.eps_sweep.size() > 1) notes.push_back("eps sweep over " + std::to_string(sc.eps_sweep.size()) + " values");
  if (!sc.verify) notes.push_back("no [verify] section: verdict covers only the Q >= E check");
  return notes;
}

fs::path default_scenario_dir() {
  if (const char* env = std::getenv("KWASS_SCENARIOS")) return env;
#ifdef KWASS_SCENARIO_DIR
  return KWASS_SCENARIO_DIR;
#else
  return "scenarios";
#endif
}

std::vector<fs::path> list_scenarios(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".toml" || ext == ".json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

PhaseEnsemble sample_initial(const InitialSpec& spec, Index N, std::uint64_t seed) {
  if (N < 1) throw std::invalid_argument("sample_initial: N must be >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(spec.d, N), v(spec.d, N);
  const double w = 2.0 * std::numbers::pi * spec.k;
  for (Index i = 0; i < N; ++i) {
    for (int a = 0; a < spec.d; ++a) {
      const double target = u(rng);
      double xi = target;
      if (a == 0 && spec.alpha > 0.0) {
        // Invert the cumulative distribution x + alpha sin(w x)/w of 1 + alpha cos(w x).
        for (int it = 0; it < 60; ++it) {
          const double f = xi + spec.alpha * std::sin(w * xi) / w - target;
          const double step = f / (1.0 + spec.alpha * std::cos(w * xi));
          xi -= step;
          if (std::abs(step) < 1e-15) break;
        }
      }
      x(a, i) = xi;
    }
    for (int a = 0; a < spec.d; ++a) {
      if (spec.velocity == "gaussian") {
        v(a, i) = spec.sigma * g(rng);
      } else if (spec.velocity == "uniform") {
        v(a, i) = spec.sigma * (2.0 * u(rng) - 1.0);
      } else {
        v(a, i) = 0.0;
      }
    }
  }
  return PhaseEnsemble::uniform(std::move(x), std::move(v));
}

PhaseEnsemble make_partner(const PhaseEnsemble& mu, const InitialSpec& initial, const PairSpec& pair,
                           std::uint64_t seed) {
  if (pair.kind == "resample") return sample_initial(initial, mu.size(), seed ^ 0x9e3779b97f4a7c15ULL);
  Matrix x = mu.positions();
  Matrix v = mu.velocities();
  if (pair.kind == "velocity_shift") {
    v.row(0).array() += pair.delta;
  } else if (pair.kind == "position_shift") {
    x.row(0).array() += pair.delta;
  } else {
    throw ConfigError("pair.kind", "unknown pair kind '" + pair.kind + "'");
  }
  return mu.with_state(std::move(x), std::move(v));
}

Coupling initial_coupling(const PhaseEnsemble& mu, const PhaseEnsemble& nu, const PairSpec& pair) {
  if (pair.coupling == "index") return Coupling::index_paired(mu, nu);
  return solve_exact(mu, nu, CostSpec::plain(pair.coupling_p)).plan;
}

void write_trajectory_csv(std::ostream& out, const PairedTrajectory& traj) {
  out << "t,D,E,mean_dx,mean_dv,mean_shifted,energy1,energy2,A\n";
  for (const auto& d : traj.diagnostics) {
    out << fmt(d.t) << ',' << fmt(d.D) << ',' << fmt(d.E) << ',' << fmt(d.mean_dx) << ',' << fmt(d.mean_dv) << ','
        << fmt(d.mean_shifted) << ',' << fmt(d.energy1) << ',' << fmt(d.energy2) << ',' << fmt(d.A) << '\n';
  }
}

std::vector<double> TrajectoryTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ConfigError(name, "no such column");
  const auto idx = static_cast<std::size_t>(it - columns.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[idx]);
  return out;
}

TrajectoryTable read_trajectory_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("", "cannot read " + file.string());
  TrajectoryTable table;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(file.string(), "empty file");
  std::stringstream header(line);
  for (std::string cell; std::getline(header, cell, ',');) table.columns.push_back(cell);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ConfigError(file.string() + ":" + std::to_string(lineno), "not a number: '" + cell + "'");
      }
    }
    if (row.size() != table.columns.size()) {
      throw ConfigError(file.string() + ":" + std::to_string(lineno), "wrong number of columns");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---------------------------------------------------------------------------

RunResult run_scenario(const Scenario& sc, const fs::path& dir) {
  OutputSet out(dir);
  try {
    out.mkdir("");
    std::vector<std::string> prefixes;
    const auto configs = stage_configs(sc, prefixes);
    bool pass = true;
    std::string summary;
    for (std::size_t s = 0; s < configs.size(); ++s) {
      const StageResult r = run_stage(sc, configs[s], prefixes[s], out);
      pass = pass && r.pass;
      if (configs.size() > 1) summary += "[" + prefixes[s] + "]\n";
      summary += r.summary;
    }
    if (configs.size() > 1) {
      summary += std::string("overall verdict: ") + (pass ? "PASS" : "FAIL") + "\n";
      out.write("verdict.txt", summary);
    }

    json manifest;
    manifest["scenario"] = sc.name;
    manifest["seed"] = sc.seed;
    manifest["config"] = json::parse(sc.canonical);
    manifest["software"] = {{"name", "kwass"},
                            {"version", kVersion},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                          "." + std::to_string(EIGEN_MINOR_VERSION)}};
    manifest["runs"] = json::array();
    for (const auto& p : prefixes) manifest["runs"].push_back(p.empty() ? "." : p);
    manifest["verdict"] = pass ? "pass" : "fail";
    json files = json::array();
    for (const auto& f : out.files()) {
      const std::string& c = out.content(f);
      files.push_back({{"file", f}, {"bytes", c.size()}, {"fnv1a64", hex(fnv1a(c))}});
    }
    manifest["outputs"] = files;
    out.write("manifest.json", manifest.dump(2) + "\n");

    RunResult result;
    result.exit_code = pass ? kExitPass : kExitFail;
    result.files = out.files();
    result.verdict = summary;
    return result;
  } catch (...) {
    out.rollback();
    throw;
  }
}

std::vector<std::string> run_simulation(const Scenario& sc, const fs::path& dir, bool snapshots) {
  OutputSet out(dir);
  try {
    out.mkdir("");
    std::vector<std::string> prefixes;
    const auto configs = stage_configs(sc, prefixes);
    for (std::size_t s = 0; s < configs.size(); ++s) {
      const std::string pre = prefixes[s].empty() ? "" : prefixes[s] + "/";
      const PhaseEnsemble mu0 = sample_initial(sc.initial, configs[s].N, sc.seed);
      const PhaseEnsemble nu0 = make_partner(mu0, sc.initial, sc.pair, sc.seed);
      PairOptions opts;
      opts.store_snapshots = snapshots;
      const PairedTrajectory traj = simulate_pair(configs[s], mu0, nu0, initial_coupling(mu0, nu0, sc.pair), opts);
      std::ostringstream csv;
      write_trajectory_csv(csv, traj);
      out.write(pre + "trajectory.csv", csv.str());
      if (snapshots) {
        for (std::size_t k = 0; k < traj.times.size(); ++k) {
          std::ostringstream a, b;
          write_ensemble_csv(a, traj.first[k]);
          write_ensemble_csv(b, traj.second[k]);
          out.write(pre + "snapshots/first_" + std::to_string(k) + ".csv", a.str());
          out.write(pre + "snapshots/second_" + std::to_string(k) + ".csv", b.str());
        }
      }
    }
    return out.files();
  } catch (...) {
    out.rollback();
    throw;
  }
}

}  // namespace kwass
