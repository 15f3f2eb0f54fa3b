#include "ekdns/stepper.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

namespace ekdns {

BdfCoefficients bdf_coefficients(int order) {
    switch (order) {
        case 1: return {1, 1.0, -1.0, 0.0};
        case 2: return {2, 1.5, -2.0, 0.5};
        default: throw ConfigError("unsupported BDF order " + std::to_string(order));
    }
}

Vec extrapolate_velocity(const Vec& v_k, const Vec& v_km1) {
    if (v_k.size() != v_km1.size()) throw SolverError("extrapolate_velocity: size mismatch");
    Vec out(v_k.size());
    for (std::size_t i = 0; i < v_k.size(); ++i) out[i] = 2.0 * v_k[i] - v_km1[i];
    return out;
}

void NewtonConfig::validate() const {
    if (!(tol > 0.0)) throw ConfigError("Newton tolerance must be positive");
    if (max_iters < 1) throw ConfigError("Newton max_iters must be at least 1");
    if (!(residual_rtol >= 0.0) || !(residual_atol >= 0.0)) throw ConfigError("Newton residual tolerances must be >= 0");
    linear.validate();
}

NewtonResult newton_solve(const NewtonSystemBuilder& build, SparseSystem& sys, Vec& U, const NewtonConfig& config,
                          const NewtonPostUpdate& post) {
    config.validate();
    NewtonResult r;
    Vec dU(U.size());
    double f0 = -1.0;
    for (int it = 0;; ++it) {
        build(U, sys);
        const double fn = norm2(sys.rhs);
        r.residual_norms.push_back(fn);
        if (!std::isfinite(fn)) {
            r.message = "non-finite residual at Newton iteration " + std::to_string(it);
            return r;
        }
        if (f0 < 0.0) f0 = fn;
        if (it > 0 && fn <= std::max(config.residual_atol, config.residual_rtol * f0)) {
            r.converged = true;
            return r;
        }
        if (it == 0 && fn == 0.0) {
            r.converged = true;
            return r;
        }
        if (it == config.max_iters) {
            r.message = "Newton did not converge in " + std::to_string(config.max_iters) + " iterations";
            return r;
        }
        std::fill(dU.begin(), dU.end(), 0.0);
        const auto lin = solve(sys, config.linear, dU);
        r.linear_iterations += lin.iterations;
        if (!std::isfinite(lin.final_residual) || lin.status == SolveStatus::Diverged) {
            r.message = "linear solve failed (" + to_string(lin.status) + ") at Newton iteration " + std::to_string(it);
            return r;
        }
        if (!lin.converged()) {
            spdlog::debug("newton {}: linear solve {} after {} iterations, residual {:.3e}", it, to_string(lin.status),
                          lin.iterations, lin.final_residual);
        }
        for (std::size_t i = 0; i < U.size(); ++i) U[i] += dU[i];
        if (post) post(U);
        const double step = norm_inf(dU);
        r.step_norms.push_back(step);
        r.iterations = it + 1;
        spdlog::debug("newton {}: |F| = {:.3e}, |dU| = {:.3e}, {} linear iterations", it, fn, step, lin.iterations);
        if (!std::isfinite(step)) {
            r.message = "non-finite Newton update";
            return r;
        }
        if (step <= config.tol) {
            if (!lin.converged()) {
                r.message = "linear solve " + to_string(lin.status) + " with a negligible update at Newton iteration " +
                            std::to_string(it);
                return r;
            }
            r.converged = true;
            return r;
        }
    }
}

std::map<int, double> collect_dirichlet(const TreeMesh& mesh, int ncomp, const std::vector<DirichletRule>& rules,
                                        double t) {
    std::map<int, double> out;
    for (const auto& rule : rules) {
        if (rule.comp < 0 || rule.comp >= ncomp) throw ConfigError("Dirichlet rule on a non-existent component");
        if (!rule.value) throw ConfigError("Dirichlet rule without a value");
        if (rule.node >= 0) {
            if (static_cast<std::size_t>(rule.node) >= mesh.num_nodes()) throw ConfigError("pinned node out of range");
            out[dof_index(rule.node, ncomp, rule.comp)] = rule.value(mesh.node(rule.node), t);
            continue;
        }
        for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
            if (!(mesh.boundary_tags(n) & rule.tags) || mesh.is_hanging(n)) continue;
            out[dof_index(static_cast<int>(n), ncomp, rule.comp)] = rule.value(mesh.node(n), t);
        }
    }
    return out;
}

void FieldState::resize(std::size_t nodes) {
    ns.assign(nodes * ns_components(dim), 0.0);
    ns_prev = ns;
    pnp.assign(nodes * pnp_components(nspecies), 0.0);
    pnp_prev = pnp;
}

Stepper::Stepper(const TreeMesh& mesh, StepperConfig config)
    : mesh_(&mesh),
      cfg_(std::move(config)),
      ns_asm_(mesh, ns_components(mesh.dim())),
      pnp_asm_(mesh, pnp_components(cfg_.groups.num_species())) {
    cfg_.groups.validate();
    cfg_.newton.validate();
    cfg_.ns_solver.validate();
    if (!(cfg_.dt > 0.0)) throw ConfigError("time step must be positive");
    if (cfg_.block.max_iters < 1) throw ConfigError("block iteration count must be at least 1");
    if (cfg_.ns_solver.preconditioner == PreconditionerKind::BlockJacobi && cfg_.ns_solver.block_size == 1) {
        cfg_.ns_solver.block_size = ns_asm_.ncomp();
    }
    if (cfg_.newton.linear.preconditioner == PreconditionerKind::BlockJacobi && cfg_.newton.linear.block_size == 1) {
        cfg_.newton.linear.block_size = pnp_asm_.ncomp();
    }
    ns_asm_.set_threads(cfg_.threads);
    pnp_asm_.set_threads(cfg_.threads);
    if (cfg_.solve_ns) ns_sys_ = ns_asm_.make_system();
    pnp_sys_ = pnp_asm_.make_system();
}

PnpInputs Stepper::pnp_inputs(const Vec& pnp_k, const Vec* pnp_km1, const Vec* vtilde, int order, double dt,
                              double t) const {
    PnpInputs in;
    in.groups = &cfg_.groups;
    in.dt = dt;
    in.time = t;
    in.bdf = bdf_coefficients(order);
    in.vtilde = vtilde;
    in.pnp_k = &pnp_k;
    in.pnp_km1 = pnp_km1;
    in.poisson_forcing = cfg_.poisson_forcing;
    in.species_forcing = cfg_.species_forcing;
    return in;
}

NewtonResult Stepper::solve_pnp(Vec& U, const Vec& pnp_k, const Vec* pnp_km1, const Vec* vtilde, int order, double dt,
                                double t) {
    const PnpInputs in = pnp_inputs(pnp_k, pnp_km1, vtilde, order, dt, t);
    const int nc = pnp_asm_.ncomp();
    const auto bc = collect_dirichlet(*mesh_, nc, cfg_.pnp_bc, t);
    std::map<int, double> delta;
    auto build = [&](const Vec& u, SparseSystem& sys) {
        pnp_asm_.assemble(pnp_kernel(in, u), sys);
        for (auto& f : sys.rhs) f = -f;
        for (const auto& [d, g] : bc) delta[d] = g - u[d];
        apply_dirichlet(sys, delta);
    };
    auto post = [&](Vec& u) { apply_constraints(*mesh_, nc, u); };
    return newton_solve(build, pnp_sys_, U, cfg_.newton, post);
}

Vec Stepper::pnp_residual_vector(const Vec& U, const Vec& pnp_k, const Vec* pnp_km1, const Vec* vtilde, int order,
                                 double dt, double t) const {
    Vec F;
    pnp_asm_.assemble_vector(pnp_residual(pnp_inputs(pnp_k, pnp_km1, vtilde, order, dt, t), U), F);
    return F;
}

SolveResult Stepper::solve_ns(Vec& ns_new, const Vec& ns_k, const Vec* ns_km1, const Vec& vtilde, const Vec* pnp,
                              int order, double dt, double t) {
    NsInputs in;
    in.groups = &cfg_.groups;
    in.dt = dt;
    in.time = t;
    in.bdf = bdf_coefficients(order);
    in.vtilde = &vtilde;
    in.ns_k = &ns_k;
    in.ns_km1 = ns_km1;
    in.pnp = pnp;
    in.forcing = cfg_.ns_forcing;
    if (ns_sys_.rhs.empty()) ns_sys_ = ns_asm_.make_system();
    ns_asm_.assemble(ns_kernel(in), ns_sys_);
    apply_dirichlet(ns_sys_, collect_dirichlet(*mesh_, ns_asm_.ncomp(), cfg_.ns_bc, t));
    auto res = solve(ns_sys_, cfg_.ns_solver, ns_new);
    apply_constraints(*mesh_, ns_asm_.ncomp(), ns_new);
    return res;
}

namespace {

double relative_change(const Vec& a, const Vec& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += a[i] * a[i];
    }
    return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

bool all_finite(const Vec& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

StepReport Stepper::advance(FieldState& state) {
    StepReport rep;
    const double dt = cfg_.dt;
    const double t_new = state.time + dt;
    const int order = state.step == 0 ? 1 : 2;
    const Vec vtilde = order == 1 ? state.ns : extrapolate_velocity(state.ns, state.ns_prev);
    const Vec* ns_km1 = order == 2 ? &state.ns_prev : nullptr;
    const Vec* pnp_km1 = order == 2 ? &state.pnp_prev : nullptr;

    Vec ns_new = state.ns;
    Vec pnp_new = state.pnp;
    bool pnp_done = false;
    for (int b = 0; b < cfg_.block.max_iters; ++b) {
        rep.block_iterations = b + 1;
        Vec ns_before = ns_new;
        if (cfg_.solve_ns) {
            const auto res = solve_ns(ns_new, state.ns, ns_km1, vtilde, &pnp_new, order, dt, t_new);
            rep.ns_linear_iterations += res.iterations;
            const double target = std::max(cfg_.ns_solver.atol, cfg_.ns_solver.rtol * res.initial_residual);
            if (!all_finite(ns_new) || (!res.converged() && !(res.final_residual <= 1e3 * target))) {
                rep.message = "NS solve failed: " + to_string(res.status) + " after " + std::to_string(res.iterations) +
                              " iterations, residual " + std::to_string(res.final_residual);
                return rep;
            }
        }
        // The PNP block sees only the extrapolated velocity, so its solution
        // does not change in later block iterations.
        if (!pnp_done) {
            const auto nr = solve_pnp(pnp_new, state.pnp, pnp_km1, cfg_.solve_ns ? &vtilde : nullptr, order, dt, t_new);
            rep.newton_iterations.push_back(nr.iterations);
            if (!nr.converged || !all_finite(pnp_new)) {
                rep.message = "PNP Newton failed: " + nr.message;
                return rep;
            }
            pnp_done = true;
            if (!cfg_.solve_ns) break;
            continue;
        }
        rep.block_change = relative_change(ns_new, ns_before);
        if (rep.block_change < cfg_.block.tol) break;
    }

    state.ns_prev = std::move(state.ns);
    state.ns = std::move(ns_new);
    state.pnp_prev = std::move(state.pnp);
    state.pnp = std::move(pnp_new);
    state.step += 1;
    state.time = t_new;
    rep.ok = true;
    return rep;
}

EquilibrateReport equilibrate_pnp(Stepper& stepper, FieldState& state, const EquilibrateConfig& config) {
    EquilibrateReport rep;
    const int nc = pnp_components(state.nspecies);
    const double dt_max = config.max_dt_factor * config.dt;
    double dt = config.dt;
    double t = state.time;
    Vec U;
    while (rep.steps < config.max_steps) {
        U = state.pnp;
        const auto nr = stepper.solve_pnp(U, state.pnp, nullptr, nullptr, 1, dt, t + dt);
        rep.newton_iterations += nr.iterations;
        if (!nr.converged || !all_finite(U)) {
            dt *= 0.5;
            spdlog::debug("equilibrate: Newton failed, dt -> {:.3e}", dt);
            if (dt < config.dt * 1e-6) break;
            continue;
        }
        ++rep.steps;
        double change = 0.0;
        for (std::size_t i = 0; i < U.size(); ++i) {
            if (i % nc != 0) change = std::max(change, std::abs(U[i] - state.pnp[i]));
        }
        state.pnp = std::move(U);
        rep.final_rate = change / dt;
        rep.final_dt = dt;
        t += dt;
        spdlog::debug("equilibrate step {}: dt {:.3e}, rate {:.3e}, {} Newton iterations", rep.steps, dt,
                      rep.final_rate, nr.iterations);
        if (rep.final_rate < config.steady_tol) {
            rep.converged = true;
            break;
        }
        dt = std::min(2.0 * dt, dt_max);
    }
    state.pnp_prev = state.pnp;
    std::fill(state.ns.begin(), state.ns.end(), 0.0);
    state.ns_prev = state.ns;
    state.step = 0;
    state.time = 0.0;
    return rep;
}

double symmetric_unit(std::mt19937_64& rng) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return 2.0 * u - 1.0;
}

void perturb_concentrations(const TreeMesh& mesh, FieldState& state, double amplitude, std::mt19937_64& rng) {
    if (!(amplitude >= 0.0 && amplitude < 1.0)) throw ConfigError("perturbation amplitude must lie in [0, 1)");
    const int nc = pnp_components(state.nspecies);
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        for (int s = 0; s < state.nspecies; ++s) {
            const double xi = symmetric_unit(rng);
            state.pnp[n * nc + 1 + s] *= 1.0 + amplitude * xi;
        }
    }
    apply_constraints(mesh, nc, state.pnp);
}

}  // namespace ekdns
