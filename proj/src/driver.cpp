#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ekdns/driver.hpp"

namespace ekdns {

namespace fs = std::filesystem;

namespace {

struct RunContext {
    fs::path dir;
    RunManifest& manifest;

    std::string path(const std::string& name) const { return (dir / name).string(); }
    void wrote(const std::string& name) {
        if (std::find(manifest.files.begin(), manifest.files.end(), name) == manifest.files.end()) {
            manifest.files.push_back(name);
        }
    }
};

std::string fmt_slopes(const char* what, double u, double p, double phi, double cp, double cm) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%s slopes: velocity %.3f pressure %.3f potential %.3f c_plus %.3f c_minus %.3f",
                  what, u, p, phi, cp, cm);
    return buf;
}

int run_mms_case(const CaseConfig& cfg, RunContext& ctx, std::string& message) {
    const auto& m = cfg.mms;
    MmsRunConfig run = m.run;
    run.threads = cfg.threads;
    const ConvergenceStudy study =
        m.temporal ? run_mms_temporal(m.dts, run, m.reference_dt) : run_mms_spatial(m.levels, run);
    write_convergence_csv(ctx.path("convergence.csv"), study, m.temporal);
    ctx.wrote("convergence.csv");

    bool ok = true;
    for (const auto& r : study.rows) {
        ctx.manifest.newton_iterations.push_back(r.max_newton);
        ctx.manifest.steps += r.steps;
        if (!r.ok) {
            ok = false;
            const std::string note = "level " + std::to_string(r.level) + " dt " + format_double(r.dt) + ": " + r.message;
            spdlog::error("{}", note);
            ctx.manifest.notes.push_back(note);
        }
    }
    if (study.reference && !study.reference->ok) {
        ok = false;
        ctx.manifest.notes.push_back("reference run: " + study.reference->message);
    }
    const std::string slopes = fmt_slopes("fitted", study.slope_velocity, study.slope_pressure, study.slope_potential,
                                          study.slope_c_plus, study.slope_c_minus);
    spdlog::info("{}", slopes);
    ctx.manifest.notes.push_back(slopes);
    if (study.reference) {
        const std::string self = fmt_slopes("self", study.self_slope_velocity, study.self_slope_pressure,
                                            study.self_slope_potential, study.self_slope_c_plus, study.self_slope_c_minus);
        spdlog::info("{}", self);
        ctx.manifest.notes.push_back(self);
    }
    if (!ok) {
        message = "one or more manufactured-solution runs failed";
        return kExitSolver;
    }
    return kExitOk;
}

int run_edl_case(const CaseConfig& cfg, RunContext& ctx, std::string& message) {
    const EdlResult r = run_edl_1d(cfg.edl);
    ctx.manifest.steps = r.report.steps;
    ctx.manifest.newton_iterations.push_back(r.report.newton_iterations);
    if (!all_finite(r.phi) || !all_finite(r.c_plus) || !all_finite(r.c_minus)) {
        message = "double-layer solution is not finite";
        return kExitSolver;
    }
    write_edl_csv(ctx.path("profiles.csv"), r);
    ctx.wrote("profiles.csv");
    const std::string note = "equilibration: " + std::to_string(r.report.steps) + " steps, rate " +
                             format_double(r.report.final_rate) + ", thickness " +
                             format_double(edl_thickness(r.y, r.c_minus));
    spdlog::info("{}", note);
    ctx.manifest.notes.push_back(note);
    if (!r.report.converged) {
        message = "double layer did not reach steady state";
        return kExitSolver;
    }
    return kExitOk;
}

int run_carve_case(const CaseConfig& cfg, RunContext& ctx, std::string& message) {
    const CarvingResult r = run_carving_demo(cfg.carve);
    spdlog::info("carving: {} active, {} intercepted, {} carved elements; {} iterations, residual {:.3e}", r.active,
                 r.intercepted, r.carved, r.solve.iterations, r.solve.final_residual);
    ctx.manifest.ns_iterations.push_back(r.solve.iterations);
    ctx.manifest.notes.push_back("active " + std::to_string(r.active) + " intercepted " + std::to_string(r.intercepted) +
                                 " carved " + std::to_string(r.carved));
    std::vector<VtkArray> arrays{{"potential", 1, r.potential}};
    std::vector<double> status(r.mesh.num_nodes(), 0.0);
    for (std::size_t n = 0; n < r.mesh.num_nodes(); ++n) status[n] = r.mesh.node_outside(n) ? 1.0 : 0.0;
    arrays.push_back({"outside", 1, status});
    write_vtk(r.mesh, arrays, ctx.path("carve.vtk"), "carving");
    ctx.wrote("carve.vtk");
    if (!r.solve.converged()) {
        message = "Laplace solve did not converge after " + std::to_string(r.solve.iterations) + " iterations";
        return kExitSolver;
    }
    return kExitOk;
}

std::vector<CurrentSample> earlier_current(const std::string& path, double until) {
    std::vector<CurrentSample> out;
    if (!fs::exists(path)) return out;
    for (const auto& row : read_csv(path)) {
        if (row.size() < 4 || row[0] > until * (1 + 1e-12)) continue;
        out.push_back({row[0], row[1], row[2], row[3]});
    }
    return out;
}

int run_ec_case(const CaseConfig& cfg, const RunOptions& opt, RunContext& ctx, std::string& message) {
    ElectroconvectionConfig ec = cfg.electroconvection;
    ec.seed = cfg.seed;
    ec.threads = cfg.threads;
    const std::uint64_t hash = ctx.manifest.config_hash;

    std::optional<Checkpoint> restart;
    std::vector<CurrentSample> history;
    if (!opt.restart.empty()) {
        restart = load_checkpoint(opt.restart);
        if (restart->config_hash != hash) {
            spdlog::warn("checkpoint was written with configuration {}, this run uses {}", hex64(restart->config_hash),
                         hex64(hash));
        }
        if (restart->dt != ec.dt) {
            throw ConfigError("checkpoint time step " + format_double(restart->dt) + " differs from dt = " +
                              format_double(ec.dt));
        }
        spdlog::info("restarting from '{}' at step {}, t = {}", opt.restart, restart->state.step, restart->state.time);
        history = earlier_current(ctx.path("current.csv"), restart->state.time);
    }

    std::string rng_text = restart ? restart->rng_state : std::string();
    FieldState last_good;
    bool non_finite = false;
    const TreeMesh* mesh = nullptr;
    NondimGroups groups;

    auto checkpoint = [&](const FieldState& st) {
        save_checkpoint(ctx.path("checkpoint.bin"), {st, ec.dt, hash, rng_text});
        ctx.wrote("checkpoint.bin");
    };
    auto snapshot = [&](const FieldState& st) {
        const std::string name = snapshot_name(st.step);
        write_vtk(*mesh, st, groups, ctx.path(name));
        ctx.wrote(name);
    };

    ElectroconvectionHooks hooks;
    hooks.restart = restart ? &restart->state : nullptr;
    hooks.on_start = [&](const Stepper& stepper, const FieldState& st, const std::mt19937_64& rng) {
        mesh = &stepper.mesh();
        groups = stepper.config().groups;
        last_good = st;
        if (!restart) {
            rng_text = rng_state(rng);
            snapshot(st);
        }
    };
    hooks.on_step = [&](const Stepper& stepper, const FieldState& st, const StepReport& rep) {
        (void)stepper;
        ctx.manifest.ns_iterations.push_back(rep.ns_linear_iterations);
        if (!all_finite(st)) {
            non_finite = true;
            return false;
        }
        last_good = st;
        ++ctx.manifest.steps;
        if (cfg.output.vtk_every > 0 && st.step % cfg.output.vtk_every == 0) snapshot(st);
        if (cfg.output.checkpoint_every > 0 && st.step % cfg.output.checkpoint_every == 0) checkpoint(st);
        return true;
    };

    const ElectroconvectionResult result = run_electroconvection(ec, hooks);
    mesh = &result.mesh;
    ctx.manifest.newton_iterations = result.newton_iterations;

    std::vector<CurrentSample> trace = history;
    for (const auto& c : result.current) {
        if (!trace.empty() && c.t <= trace.back().t) continue;
        trace.push_back(c);
    }
    // Drop samples past the last good state.
    while (!trace.empty() && trace.back().t > last_good.time * (1 + 1e-12) + 1e-300) trace.pop_back();

    if (non_finite || !result.ok) {
        checkpoint(last_good);
        if (!trace.empty()) {
            write_current_csv(ctx.path("current.csv"), trace);
            ctx.wrote("current.csv");
        }
        message = non_finite ? "non-finite values after step " + std::to_string(last_good.step + 1) +
                                   "; last good state saved to checkpoint.bin"
                             : result.message + "; last good state saved to checkpoint.bin";
        spdlog::error("{}", message);
        ctx.manifest.notes.push_back(message);
        return kExitSolver;
    }

    checkpoint(result.state);
    if (cfg.output.vtk_every <= 0 || result.state.step % cfg.output.vtk_every != 0) snapshot(result.state);
    write_current_csv(ctx.path("current.csv"), trace);
    ctx.wrote("current.csv");
    write_profiles_csv(ctx.path("profiles.csv"), result.profiles);
    ctx.wrote("profiles.csv");

    const double relstd = current_relative_std(trace);
    const std::string note = "vortices " + std::to_string(result.vortices) + ", current " +
                             format_double(trace.empty() ? 0.0 : trace.back().net) + ", relative std " +
                             format_double(relstd);
    spdlog::info("{}", note);
    ctx.manifest.notes.push_back(note);
    return kExitOk;
}

}  // namespace

RunOutcome run_case(CaseConfig config, const RunOptions& options) {
    if (options.seed) config.seed = *options.seed;
    if (options.threads) {
        if (*options.threads < 1) throw ConfigError("threads must be at least 1");
        config.threads = *options.threads;
    }
    const fs::path dir(options.out_dir.empty() ? "." : options.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
    setup_logging(dir.string());

    RunOutcome out;
    RunManifest& m = out.manifest;
    m.case_name = to_string(config.kind);
    const std::string resolved = describe(config);
    m.config_hash = fnv1a(config.source.empty() ? resolved : config.source);
    m.code_version = code_version();
    m.start_time = wall_clock_now();
    RunContext ctx{dir, m};

    {
        std::ofstream f(dir / "config.resolved");
        f << resolved;
        if (!f) throw IoError("cannot write '" + ctx.path("config.resolved") + "'");
        ctx.wrote("config.resolved");
    }
    spdlog::info("case {} (config {}), output in '{}'", m.case_name, hex64(m.config_hash), dir.string());

    try {
        switch (config.kind) {
            case CaseKind::Mms: out.exit_code = run_mms_case(config, ctx, out.message); break;
            case CaseKind::Edl1d: out.exit_code = run_edl_case(config, ctx, out.message); break;
            case CaseKind::Electroconvection:
                out.exit_code = run_ec_case(config, options, ctx, out.message);
                break;
            case CaseKind::Carve: out.exit_code = run_carve_case(config, ctx, out.message); break;
        }
    } catch (const SolverError& e) {
        out.exit_code = kExitSolver;
        out.message = e.what();
        spdlog::error("{}", out.message);
    } catch (const NonFiniteError& e) {
        out.exit_code = kExitSolver;
        out.message = e.what();
        spdlog::error("{}", out.message);
    }
    m.ok = out.exit_code == kExitOk;
    m.end_time = wall_clock_now();
    if (!out.message.empty() && std::find(m.notes.begin(), m.notes.end(), out.message) == m.notes.end()) {
        m.notes.push_back(out.message);
    }
    write_manifest(ctx.path("manifest.json"), m);
    return out;
}

// ---------------------------------------------------------------------------

namespace {

bool boxes_touch(const TreeMesh& m, std::size_t i, std::size_t j) {
    const auto a = m.element_box(i);
    const auto b = m.element_box(j);
    const auto& g = m.grid();
    int touching = 0;
    for (int k = 0; k < m.dim(); ++k) {
        const double len = g.extent(k);
        bool overlap = false, touch = false;
        const int shifts = g.periodic[k] ? 1 : 0;
        for (int s = -shifts; s <= shifts; ++s) {
            const double o = std::min(a.hi[k], b.hi[k] + s * len) - std::max(a.lo[k], b.lo[k] + s * len);
            if (o > 1e-12) overlap = true;
            if (std::abs(o) <= 1e-12) touch = true;
        }
        if (overlap) continue;
        if (!touch) return false;
        ++touching;
    }
    return touching >= 1 && touching <= (m.dim() == 3 ? 2 : 1);
}

CheckLine check_mesh_invariants() {
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int meshes = 0;
    for (int trial = 0; trial < 6; ++trial) {
        const int dim = trial % 3 == 2 ? 3 : 2;
        const int max_level = dim == 3 ? 4 : 6;
        RootGrid g;
        g.dim = dim;
        g.periodic[0] = trial % 2 == 1;
        std::vector<std::pair<Point, int>> seeds;
        for (int i = 0; i < 3; ++i) {
            seeds.push_back({{u(rng), u(rng), dim == 3 ? u(rng) : 0.0}, 2 + static_cast<int>(u(rng) * (max_level - 1))});
        }
        RefineRule rule;
        rule.max_level = max_level;
        rule.target = [seeds, dim](const Box& b) {
            int t = 1;
            for (const auto& [p, l] : seeds) {
                bool inside = true;
                for (int k = 0; k < dim; ++k) inside = inside && p[k] >= b.lo[k] && p[k] <= b.hi[k];
                if (inside) t = std::max(t, l);
            }
            return t;
        };
        const TreeMesh m = refine(build_uniform(g, 1, max_level), rule);
        double volume = 0.0;
        for (std::size_t i = 0; i < m.num_elements(); ++i) {
            volume += std::pow(m.element_size(i), dim);
            for (std::size_t j = i + 1; j < m.num_elements(); ++j) {
                if (std::abs(m.level(i) - m.level(j)) > 1 && boxes_touch(m, i, j)) {
                    return {"mesh 2:1 balance and tiling", false, "unbalanced leaves in trial " + std::to_string(trial)};
                }
            }
        }
        if (std::abs(volume - 1.0) > 1e-12) {
            return {"mesh 2:1 balance and tiling", false, "leaf volumes sum to " + format_double(volume)};
        }
        for (const auto& hc : m.constraints()) {
            double s = 0.0;
            for (const auto& [node, w] : hc.masters) {
                s += w;
                if (m.is_hanging(node)) return {"mesh 2:1 balance and tiling", false, "hanging master node"};
            }
            if (std::abs(s - 1.0) > 1e-14) return {"mesh 2:1 balance and tiling", false, "weights do not sum to one"};
        }
        ++meshes;
    }
    return {"mesh 2:1 balance and tiling", true, std::to_string(meshes) + " random meshes"};
}

CheckLine check_continuity() {
    RootGrid g;
    g.periodic[0] = true;
    RefineRule r;
    r.max_level = 5;
    r.target = [](const Box& b) { return b.lo[0] < 0.4 && b.lo[1] < 0.5 ? 5 : 2; };
    const TreeMesh m = refine(build_uniform(g, 2), r);
    Vec u(m.num_nodes());
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (auto& x : u) x = d(rng);
    apply_constraints(m, 1, u);
    // Evaluate from both sides of every element face at its midpoint.
    double jump = 0.0;
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        const Box b = m.element_box(e);
        for (int a = 0; a < 2; ++a) {
            for (double t : {0.25, 0.5, 0.75}) {
                Point p = b.lo;
                p[a] = b.hi[a];
                p[1 - a] = b.lo[1 - a] + t * (b.hi[1 - a] - b.lo[1 - a]);
                if (p[a] >= g.extent(a) - 1e-12) continue;
                Point in = p, out = p;
                in[a] -= 1e-10;
                out[a] += 1e-10;
                jump = std::max(jump, std::abs(evaluate(m, u, 1, 0, in).value - evaluate(m, u, 1, 0, out).value));
            }
        }
    }
    return {"continuity across hanging faces", jump < 1e-8, "max jump " + format_double(jump)};
}

CheckLine check_carving() {
    const Point c{0.43, 0.51, 0.0};
    const double radius = 0.23;
    auto outside = [c, radius](const Point& p) { return std::hypot(p[0] - c[0], p[1] - c[1]) >= radius; };
    RootGrid g;
    const TreeMesh m = classify(build_uniform(g, 5), GeometryClassifier{outside});
    int intercepted = 0, inactive = 0;
    for (int j = 0; j < 32; ++j) {
        for (int i = 0; i < 32; ++i) {
            int in = 0;
            for (int k = 0; k < 4; ++k) in += outside({(i + (k & 1)) / 32.0, (j + (k >> 1)) / 32.0, 0.0});
            inactive += in == 0;
            intercepted += in > 0 && in < 4;
        }
    }
    int got = 0;
    for (auto s : m.statuses()) got += s == ElementStatus::Intercepted;
    const bool ok = got == intercepted && static_cast<int>(m.carved().size()) == inactive;
    return {"carving against a corner test", ok,
            std::to_string(got) + "/" + std::to_string(intercepted) + " intercepted, " +
                std::to_string(m.carved().size()) + "/" + std::to_string(inactive) + " carved"};
}

CheckLine check_jacobian() {
    RootGrid g;
    g.periodic[0] = true;
    RefineRule r;
    r.max_level = 3;
    r.target = [](const Box& b) { return b.lo[0] < 0.3 && b.lo[1] < 0.3 ? 3 : 1; };
    const TreeMesh m = refine(build_uniform(g, 1), r);
    NondimGroups groups;
    groups.Sc = 2.0;
    groups.kappa = 0.7;
    groups.Lambda = 0.3;
    groups.species = {{1.0, 1.0}, {-1.0, 0.6}};
    std::mt19937 rng(11);
    auto random = [&](double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        Vec v(m.num_nodes() * 3);
        for (auto& x : v) x = d(rng);
        apply_constraints(m, 3, v);
        return v;
    };
    const Vec vt = random(-1.0, 1.0), pk = random(0.5, 1.5), pkm1 = random(0.5, 1.5);
    Vec U = random(0.2, 2.0);
    PnpInputs in;
    in.groups = &groups;
    in.dt = 0.05;
    in.vtilde = &vt;
    in.pnp_k = &pk;
    in.pnp_km1 = &pkm1;

    Assembler as(m, 3);
    auto sys = as.make_system();
    as.assemble(pnp_kernel(in, U), sys);
    std::vector<char> hanging(as.num_dofs(), 0);
    for (int d : as.constrained_dofs()) hanging[d] = 1;
    double amax = 0.0, emax = 0.0;
    for (double v : sys.matrix.values()) amax = std::max(amax, std::abs(v));
    Vec fp(as.num_dofs()), fm(as.num_dofs());
    for (std::size_t j = 0; j < as.num_dofs(); ++j) {
        if (hanging[j]) continue;
        const double u0 = U[j];
        const double eps = 1e-6 * std::max(1.0, std::abs(u0));
        U[j] = u0 + eps;
        apply_constraints(m, 3, U);
        as.assemble_vector(pnp_residual(in, U), fp);
        U[j] = u0 - eps;
        apply_constraints(m, 3, U);
        as.assemble_vector(pnp_residual(in, U), fm);
        U[j] = u0;
        apply_constraints(m, 3, U);
        for (std::size_t i = 0; i < as.num_dofs(); ++i) {
            if (hanging[i]) continue;
            const double fd = (fp[i] - fm[i]) / (2 * eps);
            emax = std::max(emax, std::abs(fd - sys.matrix.at(static_cast<int>(i), static_cast<int>(j))));
        }
    }
    const double rel = emax / amax;
    return {"PNP Jacobian against finite differences", rel < 1e-6, "relative error " + format_double(rel)};
}

StepperConfig closed_box(double dt) {
    StepperConfig sc;
    sc.dt = dt;
    sc.groups.Lambda = 0.2;
    sc.groups.species = {{1.0, 1.0}, {-1.0, 0.7}};
    sc.solve_ns = false;
    sc.newton.linear.rtol = 1e-12;
    sc.newton.linear.atol = 1e-15;
    sc.newton.tol = 1e-11;
    auto value = [](double v) { return [v](const Point&, double) { return v; }; };
    sc.pnp_bc = {{0, kBottom, -1, value(0.0)}, {0, kTop, -1, value(2.0)}};
    return sc;
}

FieldState bumpy(const TreeMesh& m) {
    FieldState st;
    st.resize(m.num_nodes());
    for (std::size_t n = 0; n < m.num_nodes(); ++n) {
        const auto& x = m.node(n);
        st.pnp[n * 3] = 2.0 * x[1];
        st.pnp[n * 3 + 1] = 1.0 + 0.3 * std::cos(M_PI * x[0]) * std::cos(M_PI * x[1]);
        st.pnp[n * 3 + 2] = 1.0 - 0.2 * std::sin(M_PI * x[1]);
    }
    st.pnp_prev = st.pnp;
    return st;
}

CheckLine check_mass() {
    RootGrid g;
    const TreeMesh m = build_uniform(g, 4);
    Stepper stepper(m, closed_box(0.02));
    FieldState st = bumpy(m);
    const double m0 = integrate(m, st.pnp, 3, 1), m1 = integrate(m, st.pnp, 3, 2);
    for (int k = 0; k < 20; ++k) {
        if (!stepper.advance(st).ok) return {"closed-box species mass", false, "step failed"};
    }
    const double drift = std::max(std::abs(integrate(m, st.pnp, 3, 1) - m0) / m0,
                                  std::abs(integrate(m, st.pnp, 3, 2) - m1) / m1);
    return {"closed-box species mass", drift < 1e-10, "relative drift " + format_double(drift)};
}

CheckLine check_divergence() {
    const MmsSolution mms;
    double worst = 0.0;
    for (int i = 0; i < 17; ++i) {
        for (int j = 0; j < 17; ++j) {
            for (double t : {0.0, 0.7, 2.3}) {
                worst = std::max(worst, std::abs(mms.divergence({i / 16.0, j / 16.0, 0.0}, t)));
            }
        }
    }
    return {"manufactured velocity is solenoidal", worst < 1e-12, "max |div u| " + format_double(worst)};
}

CheckLine check_determinism() {
    RootGrid g;
    const TreeMesh m = build_uniform(g, 3);
    FieldState a = bumpy(m), b = bumpy(m);
    Stepper s1(m, closed_box(0.05)), s2(m, closed_box(0.05));
    for (int k = 0; k < 5; ++k) {
        if (!s1.advance(a).ok || !s2.advance(b).ok) return {"repeated steps are bitwise identical", false, "step failed"};
    }
    const bool same = a.pnp == b.pnp && a.pnp_prev == b.pnp_prev;
    return {"repeated steps are bitwise identical", same, same ? "5 steps" : "states differ"};
}

}  // namespace

std::vector<CheckLine> run_checks() {
    std::vector<CheckLine> out;
    for (auto* f : {check_mesh_invariants, check_continuity, check_carving, check_jacobian, check_mass,
                    check_divergence, check_determinism}) {
        try {
            out.push_back(f());
        } catch (const std::exception& e) {
            out.push_back({"check", false, e.what()});
        }
    }
    return out;
}

}  // namespace ekdns
