#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ekdns/driver.hpp"

using namespace ekdns;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ekdns_driver_" + name);
    fs::remove_all(p);
    return p;
}

std::string small_ec(double t_end, int checkpoint_every = 0) {
    return "case = electroconvection\n"
           "dphi = 5\nLambda = 0.1\nkappa = 0.5\nSc = 10\n"
           "mesh.fine_level = 6\nmesh.coarse_level = 5\nmesh.band = 0.2\n"
           "dt = 0.01\nt_end = " +
           format_double(t_end) +
           "\n"
           "equilibrate.max_steps = 5\n"
           "output.checkpoint_every = " +
           std::to_string(checkpoint_every) + "\n";
}

int shell(const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

}  // namespace

TEST_CASE("carving run writes the grid and a manifest") {
    const auto dir = scratch("carve");
    auto cfg = default_config(CaseKind::Carve);
    cfg.carve.level = 4;
    RunOptions opt;
    opt.out_dir = dir.string();
    const auto r = run_case(cfg, opt);
    CHECK(r.exit_code == kExitOk);
    const auto vtk = read_vtk((dir / "carve.vtk").string());
    CHECK(vtk.find("potential") != nullptr);
    CHECK(!vtk.cells.empty());

    std::ifstream in(dir / "manifest.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j["case"] == "carve");
    CHECK(j["ok"] == true);
    CHECK(j["config_hash"] == hex64(fnv1a(describe(cfg))));
}

TEST_CASE("double-layer run writes the profile table") {
    const auto dir = scratch("edl");
    auto cfg = default_config(CaseKind::Edl1d);
    cfg.edl.cells = 64;
    RunOptions opt;
    opt.out_dir = dir.string();
    REQUIRE(run_case(cfg, opt).exit_code == kExitOk);
    std::vector<std::string> header;
    const auto rows = read_csv((dir / "profiles.csv").string(), &header);
    CHECK(header == std::vector<std::string>{"y", "phi", "c_plus", "c_minus"});
    CHECK(rows.size() == 65);
}

TEST_CASE("electroconvection restart reproduces the uninterrupted run bitwise") {
    const auto full = scratch("ec_full");
    const auto split = scratch("ec_split");
    RunOptions opt;
    opt.out_dir = full.string();
    REQUIRE(run_case(parse_config_text(small_ec(0.06)), opt).exit_code == kExitOk);

    opt.out_dir = split.string();
    REQUIRE(run_case(parse_config_text(small_ec(0.03)), opt).exit_code == kExitOk);
    fs::copy_file(split / "checkpoint.bin", split / "half.bin");
    opt.restart = (split / "half.bin").string();
    REQUIRE(run_case(parse_config_text(small_ec(0.06)), opt).exit_code == kExitOk);

    const auto a = load_checkpoint((full / "checkpoint.bin").string());
    const auto b = load_checkpoint((split / "checkpoint.bin").string());
    CHECK(a.state.step == 6);
    CHECK(b.state.step == 6);
    CHECK(a.state.ns == b.state.ns);
    CHECK(a.state.pnp == b.state.pnp);
    CHECK(a.state.ns_prev == b.state.ns_prev);
    CHECK(a.state.pnp_prev == b.state.pnp_prev);
    CHECK(a.state.time == b.state.time);
    CHECK(a.rng_state == b.rng_state);
    CHECK(!a.rng_state.empty());

    const auto ca = read_csv((full / "current.csv").string());
    const auto cb = read_csv((split / "current.csv").string());
    REQUIRE(ca.size() == 7);
    CHECK(ca == cb);
    CHECK(fs::exists(full / "state_000000.vtk"));
    CHECK(fs::exists(full / "state_000006.vtk"));
    CHECK(fs::exists(full / "profiles.csv"));
}

TEST_CASE("restart rejects a different time step") {
    const auto dir = scratch("ec_dt");
    RunOptions opt;
    opt.out_dir = dir.string();
    REQUIRE(run_case(parse_config_text(small_ec(0.02)), opt).exit_code == kExitOk);
    opt.restart = (dir / "checkpoint.bin").string();
    auto cfg = parse_config_text(small_ec(0.04));
    cfg.electroconvection.dt = 0.005;
    CHECK_THROWS_AS(run_case(cfg, opt), ConfigError);
}

TEST_CASE("solver failure keeps the last good state") {
    const auto dir = scratch("ec_fail");
    auto cfg = parse_config_text(small_ec(0.05, 1));
    cfg.electroconvection.newton.max_iters = 1;
    cfg.electroconvection.newton.tol = 1e-300;
    cfg.electroconvection.newton.residual_atol = 0.0;
    cfg.electroconvection.newton.residual_rtol = 0.0;
    RunOptions opt;
    opt.out_dir = dir.string();
    const auto r = run_case(cfg, opt);
    CHECK(r.exit_code == kExitSolver);
    CHECK(r.message.find("last good state") != std::string::npos);
    const auto ck = load_checkpoint((dir / "checkpoint.bin").string());
    CHECK(ck.state.step == 0);
    CHECK(all_finite(ck.state));
    std::ifstream in(dir / "manifest.json");
    CHECK(nlohmann::json::parse(in)["ok"] == false);
}

TEST_CASE("command line exit codes") {
    const std::string cli = EKDNS_CLI;
    const auto dir = scratch("cli");
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "bad.cfg");
        f << "case = carve\nbogus = 1\n";
    }
    {
        std::ofstream f(dir / "good.cfg");
        f << "case = carve\nlevel = 3\n";
    }
    CHECK(shell(cli + " run --config " + (dir / "bad.cfg").string() + " --out " + (dir / "o1").string()) == kExitConfig);
    CHECK(shell(cli + " run --config " + (dir / "missing.cfg").string()) == kExitConfig);
    CHECK(shell(cli + " frobnicate") == kExitConfig);
    CHECK(shell(cli) == kExitConfig);
    CHECK(shell(cli + " carve --threads 0") == kExitConfig);
    CHECK(shell(cli + " mms --config " + (dir / "good.cfg").string()) == kExitConfig);
    CHECK(shell(cli + " run --config " + (dir / "good.cfg").string() + " --out " + (dir / "o2").string()) == kExitOk);
    CHECK(fs::exists(dir / "o2" / "carve.vtk"));
    CHECK(shell(cli + " check") == kExitOk);
}
