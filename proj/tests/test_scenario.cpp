#include "doctest.h"

#include "kwass/ensemble_io.hpp"
#include "kwass/errors.hpp"
#include "kwass/parallel.hpp"
#include "kwass/scenario.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace kwass;
namespace fs = std::filesystem;

namespace {

const char* kSmall = R"(
name = "small"
seed = 42

[sim]
mode = "kernel"
kernel = "single_mode"
B = 0.5
dt = 0.01
t_end = 0.2
N = 60
snap_every = 0.05

[pair]
kind = "velocity_shift"
delta = 0.01

[[distance]]
name = "W1"
p = 1

[[distance]]
name = "W2s"
p = 2
variant = "shifted"
t = 0.5
estimator = "entropic"
eta = 0.2

[[bound]]
kind = "combined"

[verify]
measured = "W1"
bound = "combined"
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("kwass_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string error_of(const std::string& text) {
  try {
    parse_scenario_text(text, false, "x");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  REQUIRE(at != std::string::npos);
  return s.replace(at, from.size(), to);
}

int cli(const std::string& args) {
  const int status = std::system((std::string(KWASS_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("scenario parsing") {
  const Scenario sc = parse_scenario_text(kSmall, false, "fallback");
  CHECK(sc.name == "small");
  CHECK(sc.seed == 42);
  CHECK(sc.distances.size() == 2);
  CHECK(sc.distances[1].cost().name() == "shifted");
  CHECK(sc.bounds[0].distance == "W1");
  REQUIRE(sc.verify.has_value());
  CHECK(sc.verify->allowance == 3.0);
  CHECK(sc.sim.steps() == 20);
}

TEST_CASE("schema errors name the offending field") {
  CHECK(error_of(replace(kSmall, "dt = 0.01", "dt = 0")).find("sim.dt") == 0);
  CHECK(error_of(replace(kSmall, "dt = 0.01", "dt = 0.01\nfoo = 1")).find("sim.foo") == 0);
  CHECK(error_of(replace(kSmall, "p = 1\n", "p = 0.5\n")).find("distance[0].p") == 0);
  CHECK(error_of(replace(kSmall, "kind = \"combined\"", "kind = \"bogus\"")).find("bound[0].kind") == 0);
  CHECK(error_of(replace(kSmall, "measured = \"W1\"", "measured = \"W9\"")).find("verify.measured") == 0);
  CHECK(error_of(replace(kSmall, "mode = \"kernel\"", "mode = \"poisson\"\neps = 1.5")).find("sim.eps") == 0);
  CHECK(error_of("name = 3").find("name") == 0);
  CHECK(error_of("[sim\n").size() > 0);
  CHECK_FALSE(error_of(replace(kSmall, "[[bound]]\nkind = \"combined\"", "[[bound]]\nkind = \"R_of_t\"")).empty());
}

TEST_CASE("TOML and JSON describe the same scenario") {
  const std::string json = R"({"name": "small", "seed": 42,
    "sim": {"mode": "free", "dt": 0.01, "t_end": 0.1, "N": 10},
    "distance": [{"name": "W1", "p": 1}]})";
  const std::string toml = "name = \"small\"\nseed = 42\n[sim]\nmode = \"free\"\ndt = 0.01\nt_end = 0.1\nN = 10\n"
                           "[[distance]]\nname = \"W1\"\np = 1\n";
  const Scenario a = parse_scenario_text(json, true, "x"), b = parse_scenario_text(toml, false, "x");
  CHECK(a.canonical == b.canonical);
  CHECK(a.sim.snap_every == doctest::Approx(0.01));
}

TEST_CASE("bundled scenarios validate") {
  const auto files = list_scenarios(KWASS_SCENARIO_DIR);
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "free_flow.toml");
  CHECK(files[2].filename() == "vp_eps.toml");
  for (const auto& f : files) {
    const auto notes = validate_config(f);
    CHECK_FALSE(notes.empty());
  }
  const fs::path dir = scratch("bad_cfg");
  fs::create_directories(dir);
  write(dir / "bad.toml", replace(kSmall, "dt = 0.01", "dt = -1"));
  CHECK_THROWS_WITH_AS(validate_config(dir / "bad.toml"), doctest::Contains("sim.dt"), ConfigError);
  write(dir / "bad.yaml", "a: 1");
  CHECK_THROWS_AS(validate_config(dir / "bad.yaml"), ConfigError);
}

TEST_CASE("sampling and pairing") {
  InitialSpec in;
  in.alpha = 0.5;
  const PhaseEnsemble a = sample_initial(in, 500, 7), b = sample_initial(in, 500, 7);
  CHECK(a.positions() == b.positions());
  CHECK(a.velocities() == b.velocities());
  PairSpec shift;
  shift.delta = 0.25;
  const PhaseEnsemble c = make_partner(a, in, shift, 7);
  CHECK(((c.velocities() - a.velocities()).array() - 0.25).abs().maxCoeff() < 1e-15);
  CHECK(c.positions() == a.positions());
  PairSpec res;
  res.kind = "resample";
  res.coupling = "optimal";
  const PhaseEnsemble r = make_partner(a, in, res, 7);
  CHECK(r.positions() != a.positions());
  CHECK(validate_coupling(initial_coupling(a, r, res), a, r).pass);
}

TEST_CASE("scenario run writes every artifact, deterministically across thread counts") {
  const Scenario sc = parse_scenario_text(kSmall, false, "x");
  const fs::path one = scratch("run1"), three = scratch("run3");
  parallel::set_threads(1);
  const RunResult r1 = run_scenario(sc, one);
  parallel::set_threads(3);
  const RunResult r3 = run_scenario(sc, three);
  parallel::set_threads(1);
  CHECK(r1.exit_code == kExitPass);
  for (const char* f : {"trajectory.csv", "distances.csv", "bounds.csv", "report.csv", "verdict.txt", "manifest.json",
                        "plot.gp"}) {
    CHECK(fs::exists(one / f));
    CHECK(slurp(one / f) == slurp(three / f));
  }
  CHECK(r1.files == r3.files);
  const TrajectoryTable t = read_trajectory_csv(one / "trajectory.csv");
  CHECK(t.rows.size() == 5);
  CHECK(t.column("t").back() == doctest::Approx(0.2));
  CHECK_THROWS(t.column("nope"));
  CHECK(slurp(one / "manifest.json").find("\"seed\": 42") != std::string::npos);
}

TEST_CASE("a failing verdict exits with 1") {
  // W2s dominates W1 at t = 0, so a bound anchored on W1(0) is violated immediately.
  std::string text = replace(kSmall, "measured = \"W1\"", "measured = \"W2s\"");
  text = replace(text, "bound = \"combined\"", "bound = \"combined\"\nallowance = 0.0");
  const Scenario sc = parse_scenario_text(text, false, "x");
  const RunResult r = run_scenario(sc, scratch("fail"));
  CHECK(r.exit_code == kExitFail);
}

TEST_CASE("a failed run removes its partial outputs") {
  const Scenario sc = parse_scenario_text(replace(kSmall, "N = 60", "N = 6000"), false, "x");
  const fs::path out = scratch("rollback");
  CHECK_THROWS(run_scenario(sc, out));
  CHECK_FALSE(fs::exists(out / "trajectory.csv"));
}

TEST_CASE("command line exit codes") {
  const fs::path dir = scratch("cli");
  fs::create_directories(dir);
  write(dir / "small.toml", kSmall);
  write(dir / "bad.toml", replace(kSmall, "dt = 0.01", "dt = 0"));

  CHECK(cli("--help") == 0);
  CHECK(cli("frobnicate") == 2);
  CHECK(cli("list") == 0);
  CHECK(cli("validate --config " + (dir / "small.toml").string()) == 0);
  CHECK(cli("validate --config " + (dir / "bad.toml").string()) == 2);
  CHECK(cli("run --config " + (dir / "small.toml").string() + " --out " + (dir / "run").string() +
            " --threads 2") == 0);
  CHECK(fs::exists(dir / "run" / "report.csv"));
  CHECK(cli("simulate --config " + (dir / "small.toml").string() + " --out " + (dir / "sim").string() +
            " --snapshots") == 0);
  CHECK(fs::exists(dir / "sim" / "trajectory.csv"));

  // distance between two ensembles
  write(dir / "mu.csv", "x1,v1,w\n0,0,1\n");
  write(dir / "nu.csv", "x1,v1,w\n0.3,0,1\n");
  const std::string io = " --in-mu " + (dir / "mu.csv").string() + " --in-nu " + (dir / "nu.csv").string();
  CHECK(cli("distance" + io + " --p 2 --out " + (dir / "d.csv").string()) == 0);
  CHECK(slurp(dir / "d.csv") == "variant,p,params,value,converged\nplain,2,,0.3,true\n");
  CHECK(cli("distance" + io + " --cost nonlinear --eps 1 --p 2 --out " + (dir / "n.csv").string()) == 0);
  CHECK(cli("distance" + io + " --cost quad --abc 1,2,1") == 2);
  write(dir / "broken.csv", "x1,v1,w\nfoo,0,1\n");
  CHECK(cli("distance --in-mu " + (dir / "broken.csv").string() + " --in-nu " + (dir / "nu.csv").string()) == 2);

  CHECK(cli("bounds --kind combined --B 0.5 --W0 0.01 --t-end 1 --steps 10 --out " + (dir / "b").string()) == 0);
  CHECK(slurp(dir / "b" / "bounds.csv").rfind("kind,t,value,hypothesis_ok\n", 0) == 0);
  CHECK(cli("bounds --kind loeper-classical --W0 2 --c_d 1") == 3);
  CHECK(cli("bounds --kind nope") == 2);

  CHECK(cli("verify --trajectory " + (dir / "run" / "trajectory.csv").string() +
            " --kind combined --B 0.5 --out " + (dir / "v").string()) == 0);
  CHECK(fs::exists(dir / "v" / "verdict.txt"));
  CHECK(cli("verify --trajectory " + (dir / "run" / "trajectory.csv").string() + " --column mean_dx --kind combined --B 0 --allowance 0 --out " + (dir / "v0").string()) ==
        1);
}
