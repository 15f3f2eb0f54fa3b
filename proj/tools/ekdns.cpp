#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>

#include "ekdns/driver.hpp"

using namespace ekdns;

namespace {

struct CommonFlags {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::string restart;
    bool print_config = false;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool config_required) {
    auto* c = cmd->add_option("--config,-c", f.config, "configuration file");
    if (config_required) c->required();
    cmd->add_option("--out,-o", f.out, "output directory")->capture_default_str();
    cmd->add_option("--seed", f.seed, "random seed (overrides the file)");
    cmd->add_option("--threads", f.threads, "assembly threads (overrides the file)")->check(CLI::PositiveNumber);
    cmd->add_option("--restart", f.restart, "continue an electroconvection run from a checkpoint");
    cmd->add_flag("--print-config", f.print_config, "print the resolved configuration and exit");
}

int execute(const CommonFlags& f, const CaseKind* kind) {
    CaseConfig cfg;
    if (f.config.empty()) {
        cfg = default_config(*kind);
    } else {
        cfg = parse_config(f.config, kind);
    }
    if (!f.restart.empty() && cfg.kind != CaseKind::Electroconvection) {
        throw ConfigError("--restart applies only to the electroconvection case");
    }
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (f.print_config) {
        std::cout << describe(cfg);
        return kExitOk;
    }
    RunOptions opt;
    opt.out_dir = f.out;
    opt.restart = f.restart;
    const RunOutcome r = run_case(cfg, opt);
    if (r.exit_code != kExitOk) std::cerr << "error: " << r.message << "\n";
    return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stabilized finite-element solver for coupled Navier-Stokes and Poisson-Nernst-Planck flow", "ekdns"};
    app.set_version_flag("--version", code_version());
    app.require_subcommand(1);

    CommonFlags flags;
    auto* run = app.add_subcommand("run", "run the case named in a configuration file");
    add_common(run, flags, true);

    struct Fixed {
        const char* name;
        const char* help;
        CaseKind kind;
    };
    const Fixed fixed[] = {
        {"mms", "manufactured-solution convergence study", CaseKind::Mms},
        {"edl1d", "one-dimensional double-layer equilibrium", CaseKind::Edl1d},
        {"electroconvection", "two-dimensional electroconvection between ion-selective walls", CaseKind::Electroconvection},
        {"carve", "Laplace problem on a box with carved spheres", CaseKind::Carve},
    };
    std::vector<std::pair<CLI::App*, CaseKind>> cases;
    for (const auto& f : fixed) {
        auto* cmd = app.add_subcommand(f.name, f.help);
        add_common(cmd, flags, false);
        cases.push_back({cmd, f.kind});
    }
    auto* check = app.add_subcommand("check", "run the built-in invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (dynamic_cast<const CLI::RequiredError*>(&e) || dynamic_cast<const CLI::ExtrasError*>(&e)) {
            std::cerr << app.help();
        }
        return kExitConfig;
    }

    try {
        if (check->parsed()) {
            bool all = true;
            for (const auto& line : run_checks()) {
                std::cout << (line.pass ? "PASS " : "FAIL ") << line.name << ": " << line.detail << "\n";
                all = all && line.pass;
            }
            return all ? kExitOk : 1;
        }
        if (run->parsed()) return execute(flags, nullptr);
        for (const auto& [cmd, kind] : cases) {
            if (cmd->parsed()) return execute(flags, &kind);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const MeshError& e) {
        std::cerr << "mesh error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kExitSolver;
    }
    return kExitConfig;
}
