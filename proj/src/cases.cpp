#include "ekdns/cases.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

namespace ekdns {

namespace {

constexpr double kWave = 2.0 * std::numbers::pi;

struct Mode {
    double sign;
    bool sin_x;
    bool sin_y;
};

Mode mode_of(MmsField f) {
    switch (f) {
        case MmsField::U: return {1.0, true, false};
        case MmsField::V: return {-1.0, false, true};
        case MmsField::P: return {1.0, true, false};
        case MmsField::Phi: return {-1.0, false, true};
        case MmsField::CPlus: return {1.0, false, true};
        case MmsField::CMinus: return {1.0, true, false};
    }
    return {0.0, false, false};
}

double trig(bool is_sin, double a) { return is_sin ? std::sin(a) : std::cos(a); }
double dtrig(bool is_sin, double a) { return is_sin ? std::cos(a) : -std::sin(a); }

}  // namespace

MmsSolution::MmsSolution(NondimGroups groups) : groups_(std::move(groups)) {
    groups_.validate();
    if (groups_.num_species() != 2) throw ConfigError("the manufactured solution has two species");
}

NondimGroups MmsSolution::default_groups() {
    NondimGroups g;
    g.Sc = 1.0;
    g.kappa = 1.0;
    g.Lambda = 0.5;
    g.species = {{1.0, 1.0}, {-1.0, 1.0}};
    return g;
}

double MmsSolution::value(MmsField f, const Point& x, double t) const {
    const auto m = mode_of(f);
    return m.sign * std::cos(2 * t) * trig(m.sin_x, kWave * x[0]) * trig(m.sin_y, kWave * x[1]);
}

std::array<double, 3> MmsSolution::gradient(MmsField f, const Point& x, double t) const {
    const auto m = mode_of(f);
    const double a = m.sign * std::cos(2 * t);
    const double X = kWave * x[0], Y = kWave * x[1];
    return {a * kWave * dtrig(m.sin_x, X) * trig(m.sin_y, Y), a * kWave * trig(m.sin_x, X) * dtrig(m.sin_y, Y), 0.0};
}

double MmsSolution::laplacian(MmsField f, const Point& x, double t) const {
    return -2.0 * kWave * kWave * value(f, x, t);
}

double MmsSolution::time_derivative(MmsField f, const Point& x, double t) const {
    const auto m = mode_of(f);
    return -2.0 * m.sign * std::sin(2 * t) * trig(m.sin_x, kWave * x[0]) * trig(m.sin_y, kWave * x[1]);
}

double MmsSolution::divergence(const Point& x, double t) const {
    return gradient(MmsField::U, x, t)[0] + gradient(MmsField::V, x, t)[1];
}

std::array<double, 3> MmsSolution::momentum_forcing(const Point& x, double t) const {
    const double u = value(MmsField::U, x, t), v = value(MmsField::V, x, t);
    const auto gu = gradient(MmsField::U, x, t), gv = gradient(MmsField::V, x, t);
    const auto gp = gradient(MmsField::P, x, t), gphi = gradient(MmsField::Phi, x, t);
    const double rho = groups_.species[0].z * value(MmsField::CPlus, x, t) +
                       groups_.species[1].z * value(MmsField::CMinus, x, t);
    const double inv_sc = 1.0 / groups_.Sc;
    const double fe = groups_.kappa / (2.0 * groups_.Lambda * groups_.Lambda) * rho;
    return {inv_sc * (time_derivative(MmsField::U, x, t) + u * gu[0] + v * gu[1]) + gp[0] -
                laplacian(MmsField::U, x, t) + fe * gphi[0],
            inv_sc * (time_derivative(MmsField::V, x, t) + u * gv[0] + v * gv[1]) + gp[1] -
                laplacian(MmsField::V, x, t) + fe * gphi[1],
            0.0};
}

double MmsSolution::poisson_forcing(const Point& x, double t) const {
    const double rho = groups_.species[0].z * value(MmsField::CPlus, x, t) +
                       groups_.species[1].z * value(MmsField::CMinus, x, t);
    return -2.0 * groups_.Lambda * groups_.Lambda * laplacian(MmsField::Phi, x, t) - rho;
}

double MmsSolution::species_forcing(int s, const Point& x, double t) const {
    const MmsField f = s == 0 ? MmsField::CPlus : MmsField::CMinus;
    const double z = groups_.species[s].z, D = groups_.species[s].D;
    const double u = value(MmsField::U, x, t), v = value(MmsField::V, x, t);
    const auto gc = gradient(f, x, t), gphi = gradient(MmsField::Phi, x, t);
    const double c = value(f, x, t);
    return time_derivative(f, x, t) + u * gc[0] + v * gc[1] -
           D * (laplacian(f, x, t) + z * (gc[0] * gphi[0] + gc[1] * gphi[1] + c * laplacian(MmsField::Phi, x, t)));
}

StepperConfig MmsSolution::stepper_config(double dt) const {
    StepperConfig cfg;
    cfg.dt = dt;
    cfg.groups = groups_;
    const std::uint32_t all = kLeft | kRight | kBottom | kTop;
    const MmsField ns_fields[] = {MmsField::U, MmsField::V, MmsField::P};
    const MmsField pnp_fields[] = {MmsField::Phi, MmsField::CPlus, MmsField::CMinus};
    for (int c = 0; c < 3; ++c) {
        cfg.ns_bc.push_back({c, all, -1, [this, f = ns_fields[c]](const Point& x, double t) { return value(f, x, t); }});
        cfg.pnp_bc.push_back(
            {c, all, -1, [this, f = pnp_fields[c]](const Point& x, double t) { return value(f, x, t); }});
    }
    cfg.ns_forcing = [this](const Point& x, double t) { return momentum_forcing(x, t); };
    cfg.poisson_forcing = [this](const Point& x, double t) { return poisson_forcing(x, t); };
    for (int s = 0; s < 2; ++s) {
        cfg.species_forcing.push_back([this, s](const Point& x, double t) { return species_forcing(s, x, t); });
    }
    return cfg;
}

void MmsSolution::fill_state(const TreeMesh& mesh, double t, Vec& ns, Vec& pnp) const {
    ns.assign(mesh.num_nodes() * 3, 0.0);
    pnp.assign(mesh.num_nodes() * 3, 0.0);
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        const auto& x = mesh.node(n);
        ns[n * 3] = value(MmsField::U, x, t);
        ns[n * 3 + 1] = value(MmsField::V, x, t);
        ns[n * 3 + 2] = value(MmsField::P, x, t);
        pnp[n * 3] = value(MmsField::Phi, x, t);
        pnp[n * 3 + 1] = value(MmsField::CPlus, x, t);
        pnp[n * 3 + 2] = value(MmsField::CMinus, x, t);
    }
}

MmsErrors run_mms(const MmsRunConfig& config, FieldState* final_state) {
    MmsErrors out;
    out.level = config.level;
    out.dt = config.dt;
    out.h = std::ldexp(1.0, -config.level);
    const MmsSolution mms;
    RootGrid grid;
    grid.dim = 2;
    const TreeMesh mesh = build_uniform(grid, config.level, std::max(16, config.level));

    StepperConfig sc = mms.stepper_config(config.dt);
    sc.ns_solver = config.ns_solver;
    sc.newton = config.newton;
    sc.block = config.block;
    sc.threads = config.threads;
    Stepper stepper(mesh, sc);

    FieldState st;
    st.resize(mesh.num_nodes());
    mms.fill_state(mesh, 0.0, st.ns, st.pnp);
    st.ns_prev = st.ns;
    st.pnp_prev = st.pnp;

    const int steps = static_cast<int>(std::lround(config.t_end / config.dt));
    for (int k = 0; k < steps; ++k) {
        const auto rep = stepper.advance(st);
        if (!rep.ok) {
            out.message = "step " + std::to_string(k + 1) + ": " + rep.message;
            return out;
        }
        for (int it : rep.newton_iterations) out.max_newton = std::max(out.max_newton, it);
    }
    out.steps = steps;
    out.time = st.time;
    const double t = st.time;
    auto err = [&](const Vec& u, int comp, MmsField f) {
        return l2_error(mesh, u, 3, comp, [&](const Point& x) { return mms.value(f, x, t); });
    };
    out.velocity = std::hypot(err(st.ns, 0, MmsField::U), err(st.ns, 1, MmsField::V));
    out.pressure = err(st.ns, 2, MmsField::P);
    out.potential = err(st.pnp, 0, MmsField::Phi);
    out.c_plus = err(st.pnp, 1, MmsField::CPlus);
    out.c_minus = err(st.pnp, 2, MmsField::CMinus);
    out.ok = true;
    if (final_state) *final_state = std::move(st);
    return out;
}

double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = std::min(x.size(), y.size());
    if (n < 2) return 0.0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

void fill_slopes(ConvergenceStudy& s, bool spatial) {
    std::vector<double> x, ev, ep, ephi, ecp, ecm;
    for (const auto& r : s.rows) {
        if (!r.ok) continue;
        x.push_back(spatial ? r.h : r.dt);
        ev.push_back(r.velocity);
        ep.push_back(r.pressure);
        ephi.push_back(r.potential);
        ecp.push_back(r.c_plus);
        ecm.push_back(r.c_minus);
    }
    s.slope_velocity = fitted_slope(x, ev);
    s.slope_pressure = fitted_slope(x, ep);
    s.slope_potential = fitted_slope(x, ephi);
    s.slope_c_plus = fitted_slope(x, ecp);
    s.slope_c_minus = fitted_slope(x, ecm);
}

}  // namespace

ConvergenceStudy run_mms_spatial(const std::vector<int>& levels, const MmsRunConfig& base) {
    ConvergenceStudy s;
    for (int level : levels) {
        auto cfg = base;
        cfg.level = level;
        s.rows.push_back(run_mms(cfg));
        const auto& r = s.rows.back();
        spdlog::info("mms level {}: velocity {:.4e}, potential {:.4e}, pressure {:.4e}{}", level, r.velocity,
                     r.potential, r.pressure, r.ok ? "" : " FAILED " + r.message);
    }
    fill_slopes(s, true);
    return s;
}

ConvergenceStudy run_mms_temporal(const std::vector<double>& dts, const MmsRunConfig& base, double reference_dt) {
    ConvergenceStudy s;
    std::vector<FieldState> finals;
    for (double dt : dts) {
        auto cfg = base;
        cfg.dt = dt;
        finals.emplace_back();
        s.rows.push_back(run_mms(cfg, &finals.back()));
        const auto& r = s.rows.back();
        spdlog::info("mms dt {}: velocity {:.4e}, potential {:.4e}, pressure {:.4e}{}", dt, r.velocity, r.potential,
                     r.pressure, r.ok ? "" : " FAILED " + r.message);
    }
    fill_slopes(s, false);
    if (reference_dt <= 0.0) return s;

    auto cfg = base;
    cfg.dt = reference_dt;
    FieldState ref;
    s.reference = run_mms(cfg, &ref);
    if (!s.reference->ok) return s;
    RootGrid grid;
    grid.dim = 2;
    const TreeMesh mesh = build_uniform(grid, base.level, std::max(16, base.level));
    std::vector<double> x, ev, ep, ephi, ecp, ecm;
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
        auto& r = s.rows[i];
        if (!r.ok) continue;
        // Runs end at round(t_end / dt) * dt; compare only at a common time.
        if (std::abs(r.time - s.reference->time) > 1e-9) {
            r.message = "final time differs from the reference run";
            continue;
        }
        Vec dns(ref.ns.size()), dpnp(ref.pnp.size());
        for (std::size_t k = 0; k < dns.size(); ++k) dns[k] = finals[i].ns[k] - ref.ns[k];
        for (std::size_t k = 0; k < dpnp.size(); ++k) dpnp[k] = finals[i].pnp[k] - ref.pnp[k];
        auto zero = [](const Point&) { return 0.0; };
        r.velocity_self = std::hypot(l2_error(mesh, dns, 3, 0, zero), l2_error(mesh, dns, 3, 1, zero));
        r.pressure_self = l2_error(mesh, dns, 3, 2, zero);
        r.potential_self = l2_error(mesh, dpnp, 3, 0, zero);
        r.c_plus_self = l2_error(mesh, dpnp, 3, 1, zero);
        r.c_minus_self = l2_error(mesh, dpnp, 3, 2, zero);
        x.push_back(r.dt);
        ev.push_back(r.velocity_self);
        ep.push_back(r.pressure_self);
        ephi.push_back(r.potential_self);
        ecp.push_back(r.c_plus_self);
        ecm.push_back(r.c_minus_self);
    }
    s.self_slope_velocity = fitted_slope(x, ev);
    s.self_slope_pressure = fitted_slope(x, ep);
    s.self_slope_potential = fitted_slope(x, ephi);
    s.self_slope_c_plus = fitted_slope(x, ecp);
    s.self_slope_c_minus = fitted_slope(x, ecm);
    return s;
}

// ---------------------------------------------------------------------------

namespace {

ScalarSource constant(double v) {
    return [v](const Point&, double) { return v; };
}

/// Nodes on the line x = x0 sorted by height.
std::vector<std::size_t> column_nodes(const TreeMesh& mesh, double x0) {
    std::vector<std::size_t> idx;
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        if (std::abs(mesh.node(n)[0] - x0) < 1e-12 && !mesh.is_hanging(n)) idx.push_back(n);
    }
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return mesh.node(a)[1] < mesh.node(b)[1]; });
    return idx;
}

}  // namespace

EdlResult run_edl_1d(const EdlConfig& config) {
    if (config.cells < 1 || (config.cells & (config.cells - 1)) != 0) {
        throw ConfigError("EDL cell count must be a power of two");
    }
    RootGrid grid;
    grid.dim = 2;
    grid.count = {1, config.cells, 1};
    grid.root_size = 1.0 / config.cells;
    grid.periodic[0] = true;
    int level = 0;
    while ((1 << level) < config.cells) ++level;
    const TreeMesh mesh = build_uniform(grid, level, std::max(16, level));

    StepperConfig sc;
    sc.dt = config.equilibrate.dt;
    sc.groups.Lambda = config.Lambda;
    sc.solve_ns = false;
    sc.newton = config.newton;
    sc.pnp_bc = {{0, kBottom, -1, constant(0.0)},
                 {0, kTop, -1, constant(config.dphi)},
                 {1, kTop, -1, constant(1.0)},
                 {2, kTop, -1, constant(1.0)}};
    Stepper stepper(mesh, sc);

    FieldState st;
    st.resize(mesh.num_nodes());
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        st.pnp[n * 3] = config.dphi * mesh.node(n)[1];
        st.pnp[n * 3 + 1] = st.pnp[n * 3 + 2] = 1.0;
    }
    EdlResult out;
    out.report = equilibrate_pnp(stepper, st, config.equilibrate);
    for (std::size_t n : column_nodes(mesh, 0.0)) {
        out.y.push_back(mesh.node(n)[1]);
        out.phi.push_back(st.pnp[n * 3]);
        out.c_plus.push_back(st.pnp[n * 3 + 1]);
        out.c_minus.push_back(st.pnp[n * 3 + 2]);
    }
    return out;
}

double edl_thickness(const std::vector<double>& y, const std::vector<double>& c) {
    if (y.empty()) return 0.0;
    const double thr = 0.01 * std::abs(c[0] - 1.0);
    for (std::size_t i = 1; i < y.size(); ++i) {
        const double d1 = std::abs(c[i] - 1.0);
        if (d1 < thr) {
            const double d0 = std::abs(c[i - 1] - 1.0);
            const double w = (d0 - thr) / (d0 - d1);
            return y[i - 1] + w * (y[i] - y[i - 1]);
        }
    }
    return y.back();
}

// ---------------------------------------------------------------------------

TreeMesh electroconvection_mesh(const ElectroconvectionConfig& config) {
    RootGrid grid;
    grid.dim = 2;
    grid.count = {8, 1, 1};
    grid.root_size = 1.0;
    grid.periodic[0] = true;
    const int max_level = std::max(config.fine_level, 16);
    auto base = build_uniform(grid, config.coarse_level, max_level);
    if (config.fine_level <= config.coarse_level) return base;
    auto rule = band_rule(1, config.band, config.fine_level, config.coarse_level);
    rule.max_level = max_level;
    return refine(base, rule);
}

const std::vector<std::string>& boundary_faces() {
    static const std::vector<std::string> f{"left", "right", "bottom", "top"};
    return f;
}

const std::vector<std::string>& boundary_variables() {
    static const std::vector<std::string> v{"u", "v", "p", "phi", "c_plus", "c_minus"};
    return v;
}

std::uint32_t face_tag(const std::string& face) {
    if (face == "left") return kLeft;
    if (face == "right") return kRight;
    if (face == "bottom") return kBottom;
    if (face == "top") return kTop;
    throw ConfigError("unknown face '" + face + "'");
}

std::string to_string(BcKind kind) {
    switch (kind) {
        case BcKind::Dirichlet: return "dirichlet";
        case BcKind::ZeroFlux: return "zero_flux";
        case BcKind::Periodic: return "periodic";
        case BcKind::Outflow: return "outflow";
    }
    return "?";
}

BoundarySet electroconvection_boundaries(double dphi) {
    BoundarySet b;
    const BoundaryCondition periodic{BcKind::Periodic, 0.0};
    auto dir = [](double v) { return BoundaryCondition{BcKind::Dirichlet, v}; };
    const BoundaryCondition natural{BcKind::ZeroFlux, 0.0};
    for (const auto& v : boundary_variables()) b["left"][v] = b["right"][v] = periodic;
    for (const char* f : {"bottom", "top"}) {
        b[f]["u"] = b[f]["v"] = dir(0.0);
        b[f]["p"] = natural;
    }
    b["bottom"]["phi"] = dir(0.0);
    b["bottom"]["c_plus"] = dir(2.0);
    b["bottom"]["c_minus"] = natural;
    b["top"]["phi"] = dir(dphi);
    b["top"]["c_plus"] = dir(1.0);
    b["top"]["c_minus"] = dir(1.0);
    return b;
}

void validate_boundaries(const BoundarySet& bcs) {
    for (const auto& [face, vars] : bcs) {
        face_tag(face);
        for (const auto& [var, bc] : vars) {
            (void)bc;
            const auto& names = boundary_variables();
            if (std::find(names.begin(), names.end(), var) == names.end()) {
                throw ConfigError("unknown boundary variable '" + var + "' on " + face);
            }
        }
    }
    for (const auto& var : boundary_variables()) {
        for (const auto& face : boundary_faces()) {
            const auto f = bcs.find(face);
            if (f == bcs.end() || !f->second.count(var)) {
                throw ConfigError("missing boundary condition for " + var + " on " + face);
            }
        }
        for (auto [a, b] : {std::pair{"left", "right"}, std::pair{"bottom", "top"}}) {
            const bool pa = bcs.at(a).at(var).kind == BcKind::Periodic;
            const bool pb = bcs.at(b).at(var).kind == BcKind::Periodic;
            if (pa != pb) {
                throw ConfigError(std::string("periodic ") + var + " on " + (pa ? a : b) + " needs a periodic " +
                                  (pa ? b : a));
            }
        }
    }
}

void add_dirichlet_rules(const BoundarySet& bcs, StepperConfig& sc) {
    const auto& vars = boundary_variables();
    for (const auto& [face, m] : bcs) {
        for (const auto& [var, bc] : m) {
            if (bc.kind != BcKind::Dirichlet) continue;
            const int idx = static_cast<int>(std::find(vars.begin(), vars.end(), var) - vars.begin());
            DirichletRule r{idx % 3, face_tag(face), -1, constant(bc.value)};
            (idx < 3 ? sc.ns_bc : sc.pnp_bc).push_back(r);
        }
    }
}

StepperConfig electroconvection_stepper(const ElectroconvectionConfig& config) {
    StepperConfig sc;
    sc.dt = config.dt;
    sc.groups.Sc = config.Sc;
    sc.groups.kappa = config.kappa;
    sc.groups.Lambda = config.Lambda;
    sc.ns_solver = config.ns_solver;
    sc.newton = config.newton;
    sc.block = config.block;
    sc.threads = config.threads;
    const BoundarySet bcs = config.boundaries.empty() ? electroconvection_boundaries(config.dphi) : config.boundaries;
    validate_boundaries(bcs);
    for (const auto& var : boundary_variables()) {
        if (bcs.at("left").at(var).kind != BcKind::Periodic) {
            throw ConfigError("the electroconvection box is periodic in x; " + var + " on left must be periodic");
        }
        for (const char* f : {"bottom", "top"}) {
            if (bcs.at(f).at(var).kind == BcKind::Periodic) {
                throw ConfigError("the electroconvection box is not periodic in y (" + var + " on " + f + ")");
            }
        }
    }
    add_dirichlet_rules(bcs, sc);
    return sc;
}

namespace {

/// The pressure is fixed at one top-wall node since every velocity boundary
/// is a no-slip wall.
void add_pressure_pin(const TreeMesh& mesh, StepperConfig& sc) {
    for (const auto& r : sc.ns_bc) {
        if (r.comp == 2) return;
    }
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        if ((mesh.boundary_tags(n) & kTop) && !mesh.is_hanging(n)) {
            sc.ns_bc.push_back({2, 0, static_cast<int>(n), constant(0.0)});
            return;
        }
    }
}

}  // namespace

FieldState electroconvection_initial(const TreeMesh& mesh, const ElectroconvectionConfig& config, Stepper& stepper,
                                     EquilibrateReport* report, std::mt19937_64* rng_out) {
    FieldState st;
    st.resize(mesh.num_nodes());
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        st.pnp[n * 3] = config.dphi * mesh.node(n)[1];
        st.pnp[n * 3 + 1] = st.pnp[n * 3 + 2] = 1.0;
    }
    const bool solve_ns = stepper.config().solve_ns;
    stepper.config().solve_ns = false;
    auto rep = equilibrate_pnp(stepper, st, config.equilibrate);
    stepper.config().solve_ns = solve_ns;
    spdlog::info("equilibration: {} steps, rate {:.3e}, converged {}", rep.steps, rep.final_rate, rep.converged);
    if (report) *report = rep;
    std::mt19937_64 rng(config.seed);
    perturb_concentrations(mesh, st, config.perturbation, rng);
    if (rng_out) *rng_out = rng;
    st.pnp_prev = st.pnp;
    return st;
}

std::vector<ProfileRow> x_averaged_profiles(const TreeMesh& mesh, const FieldState& state,
                                            const NondimGroups& groups) {
    // Average over x at each distinct node height using the finite-element
    // interpolant on a uniform sampling across the period.
    std::vector<double> ys;
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) ys.push_back(mesh.node(n)[1]);
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), ys.end());
    const double width = mesh.grid().extent(0);
    const int samples = 256;
    const int nc = pnp_components(groups.num_species());
    std::vector<ProfileRow> rows;
    for (double y : ys) {
        ProfileRow r;
        r.y = y;
        for (int i = 0; i < samples; ++i) {
            const Point x{(i + 0.5) * width / samples, std::min(y, mesh.grid().extent(1) * (1 - 1e-12)), 0.0};
            const auto phi = evaluate(mesh, state.pnp, nc, 0, x);
            const auto cp = evaluate(mesh, state.pnp, nc, 1, x);
            const auto cm = evaluate(mesh, state.pnp, nc, 2, x);
            r.dphi_dy += phi.grad[1];
            r.c_plus += cp.value;
            r.c_minus += cm.value;
            r.charge += groups.species[0].z * cp.value + groups.species[1].z * cm.value;
        }
        r.dphi_dy /= samples;
        r.c_plus /= samples;
        r.c_minus /= samples;
        r.charge /= samples;
        rows.push_back(r);
    }
    return rows;
}

int count_vortices(const TreeMesh& mesh, const Vec& ns, double y, int samples) {
    const double width = mesh.grid().extent(0);
    const int nc = ns_components(mesh.dim());
    double vmax = 0.0;
    std::vector<double> v(samples);
    for (int i = 0; i < samples; ++i) {
        v[i] = evaluate(mesh, ns, nc, 1, {(i + 0.5) * width / samples, y, 0.0}).value;
        vmax = std::max(vmax, std::abs(v[i]));
    }
    // Ignore round-off level velocities.
    const double floor = 1e-3 * vmax;
    if (vmax == 0.0) return 0;
    int changes = 0;
    int last = 0;
    int first = 0;
    for (int i = 0; i < samples; ++i) {
        const int s = v[i] > floor ? 1 : (v[i] < -floor ? -1 : 0);
        if (s == 0) continue;
        if (first == 0) first = s;
        if (last != 0 && s != last) ++changes;
        last = s;
    }
    // Periodic wrap.
    if (first != 0 && last != 0 && first != last) ++changes;
    return changes;
}

double current_relative_std(const std::vector<CurrentSample>& trace, double fraction) {
    if (trace.empty()) return 0.0;
    const double t0 = trace.front().t, t1 = trace.back().t;
    const double start = t1 - fraction * (t1 - t0);
    double s = 0.0, s2 = 0.0;
    int n = 0;
    for (const auto& c : trace) {
        if (c.t < start) continue;
        const double j = std::abs(c.net);
        s += j;
        s2 += j * j;
        ++n;
    }
    if (n == 0) return 0.0;
    const double mean = s / n;
    const double var = std::max(0.0, s2 / n - mean * mean);
    return mean != 0.0 ? std::sqrt(var) / std::abs(mean) : 0.0;
}

ElectroconvectionResult run_electroconvection(const ElectroconvectionConfig& config,
                                              const ElectroconvectionHooks& hooks) {
    ElectroconvectionResult out;
    out.mesh = electroconvection_mesh(config);
    const TreeMesh& mesh = out.mesh;
    spdlog::info("electroconvection mesh: {} elements, {} nodes", mesh.num_elements(), mesh.num_nodes());
    StepperConfig sc = electroconvection_stepper(config);
    add_pressure_pin(mesh, sc);
    Stepper stepper(mesh, sc);
    out.state = hooks.restart ? *hooks.restart
                              : electroconvection_initial(mesh, config, stepper, &out.equilibrate, &out.rng);
    if (hooks.on_start) hooks.on_start(stepper, out.state, out.rng);

    auto sample = [&](const FieldState& st) {
        const auto f = boundary_flux(mesh, st.pnp, sc.groups, kTop);
        out.current.push_back({st.time, f.species[0], f.species[1], f.net});
    };
    if (!hooks.restart) sample(out.state);
    const int steps = static_cast<int>(std::lround(config.t_end / config.dt));
    while (out.state.step < steps) {
        const auto rep = stepper.advance(out.state);
        if (!rep.ok) {
            out.message = "step " + std::to_string(out.state.step + 1) + ": " + rep.message;
            return out;
        }
        for (int it : rep.newton_iterations) out.newton_iterations.push_back(it);
        if (out.state.step % std::max(1, config.current_every) == 0) sample(out.state);
        if (hooks.on_step && !hooks.on_step(stepper, out.state, rep)) break;
    }
    out.profiles = x_averaged_profiles(mesh, out.state, sc.groups);
    out.vortices = count_vortices(mesh, out.state.ns, 0.5);
    out.ok = true;
    return out;
}

// ---------------------------------------------------------------------------

CarvingResult run_carving_demo(const CarvingConfig& config) {
    if (config.dim != 2 && config.dim != 3) throw ConfigError("carving demo needs dim 2 or 3");
    for (const auto& s : config.spheres) {
        if (!(s.radius > 0.0)) throw ConfigError("sphere radius must be positive");
    }
    if (config.outer && !(config.outer->radius > 0.0)) throw ConfigError("outer sphere radius must be positive");
    const int dim = config.dim;
    auto dist = [dim](const Point& a, const Point& b) {
        double s = 0.0;
        for (int k = 0; k < dim; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
        return std::sqrt(s);
    };
    const auto spheres = config.spheres;
    const auto outer = config.outer;
    GeometryClassifier geom;
    geom.in_domain = [spheres, outer, dist](const Point& x) {
        for (const auto& s : spheres) {
            if (dist(x, s.center) < s.radius) return false;
        }
        return !(outer && dist(x, outer->center) > outer->radius);
    };
    RootGrid grid;
    grid.dim = dim;
    CarvingResult out;
    out.mesh = enumerate_nodes(classify(build_uniform(grid, config.level, std::max(16, config.level)), geom));
    const TreeMesh& mesh = out.mesh;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        (mesh.status(e) == ElementStatus::Intercepted ? out.intercepted : out.active) += 1;
    }
    out.carved = mesh.carved().size();

    Assembler as(mesh, 1);
    auto sys = as.make_system();
    as.assemble(
        [](const ElementContext& ctx, double* ke, double*) {
            const auto& q = *ctx.quad;
            for (int p = 0; p < q.nq; ++p) {
                for (int a = 0; a < q.nn; ++a) {
                    for (int b = 0; b < q.nn; ++b) {
                        double g = 0.0;
                        for (int k = 0; k < q.dim; ++k) g += q.dn(p, a)[k] * q.dn(p, b)[k];
                        ke[a * q.nn + b] += g * q.jxw[p];
                    }
                }
            }
        },
        sys);
    std::map<int, double> bc;
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        if (mesh.is_hanging(n)) continue;
        const auto tags = mesh.boundary_tags(n);
        const auto& x = mesh.node(n);
        if (tags & kCarved) {
            double d_in = 1e300;
            for (const auto& s : spheres) d_in = std::min(d_in, std::abs(dist(x, s.center) - s.radius));
            const double d_out = outer ? std::abs(dist(x, outer->center) - outer->radius) : 1e300;
            bc[static_cast<int>(n)] = d_in <= d_out ? config.surface_value : config.outer_value;
        } else if (tags != 0) {
            bc[static_cast<int>(n)] = config.outer_value;
        }
    }
    apply_dirichlet(sys, bc);
    out.potential.assign(as.num_dofs(), 0.0);
    out.solve = solve(sys, config.solver, out.potential);
    apply_constraints(mesh, 1, out.potential);
    return out;
}

}  // namespace ekdns
