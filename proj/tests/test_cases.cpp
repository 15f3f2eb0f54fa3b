#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ekdns/cases.hpp"
#include "oracles.hpp"

using namespace ekdns;

namespace {

constexpr double kFd = 2e-3;

template <class F>
double d1(F&& f, double h = kFd) {
    return (-f(-3 * h) + 9 * f(-2 * h) - 45 * f(-h) + 45 * f(h) - 9 * f(2 * h) + f(3 * h)) / (60 * h);
}

struct Probe {
    const MmsSolution& m;
    double val(MmsField f, Point x, double t) const { return m.value(f, x, t); }
    double dx(MmsField f, Point x, double t, int k) const {
        return d1([&](double s) {
            Point y = x;
            y[k] += s;
            return m.value(f, y, t);
        });
    }
    double dt(MmsField f, Point x, double t) const {
        return d1([&](double s) { return m.value(f, x, t + s); });
    }
    double lap(MmsField f, Point x, double t) const {
        double s = 0.0;
        for (int k = 0; k < 2; ++k) {
            s += d1([&](double e) {
                Point y = x;
                y[k] += e;
                return dx(f, y, t, k);
            });
        }
        return s;
    }
};

std::vector<Point> random_points(int n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<Point> pts;
    for (int i = 0; i < n; ++i) pts.push_back({u(rng), u(rng), 0.0});
    return pts;
}

}  // namespace

TEST_CASE("manufactured forcing matches finite differences of the fields") {
    const MmsSolution mms;
    const Probe pr{mms};
    const auto& g = mms.groups();
    const double t = 0.7;
    using F = MmsField;
    for (const auto& x : random_points(20, 3)) {
        const double u = pr.val(F::U, x, t), v = pr.val(F::V, x, t);
        auto rho_at = [&](const Point& y) {
            return g.species[0].z * pr.val(F::CPlus, y, t) + g.species[1].z * pr.val(F::CMinus, y, t);
        };
        const double rho = rho_at(x);
        const double fe = g.kappa / (2 * g.Lambda * g.Lambda) * rho;
        const F vel[2] = {F::U, F::V};
        const auto fm = mms.momentum_forcing(x, t);
        for (int i = 0; i < 2; ++i) {
            const double conv = u * pr.dx(vel[i], x, t, 0) + v * pr.dx(vel[i], x, t, 1);
            const double ref = (pr.dt(vel[i], x, t) + conv) / g.Sc + pr.dx(F::P, x, t, i) - pr.lap(vel[i], x, t) +
                               fe * pr.dx(F::Phi, x, t, i);
            CHECK(std::abs(fm[i] - ref) < 1e-7);
        }
        const double pref = -2 * g.Lambda * g.Lambda * pr.lap(F::Phi, x, t) - rho;
        CHECK(std::abs(mms.poisson_forcing(x, t) - pref) < 1e-7);

        const F sp[2] = {F::CPlus, F::CMinus};
        for (int s = 0; s < 2; ++s) {
            const double z = g.species[s].z, D = g.species[s].D;
            // Divergence of the flux field -D (grad c + z c grad phi).
            double div = 0.0;
            for (int k = 0; k < 2; ++k) {
                div += d1([&](double e) {
                    Point y = x;
                    y[k] += e;
                    return -D * (pr.dx(sp[s], y, t, k) + z * pr.val(sp[s], y, t) * pr.dx(F::Phi, y, t, k));
                });
            }
            const double ref =
                pr.dt(sp[s], x, t) + u * pr.dx(sp[s], x, t, 0) + v * pr.dx(sp[s], x, t, 1) + div;
            CHECK(std::abs(mms.species_forcing(s, x, t) - ref) < 1e-7);
        }
    }
}

TEST_CASE("manufactured velocity is divergence free and analytic derivatives agree") {
    const MmsSolution mms;
    const Probe pr{mms};
    for (const auto& x : random_points(50, 11)) {
        for (double t : {0.0, 0.4, 2.9}) {
            CHECK(std::abs(mms.divergence(x, t)) < 1e-12);
            for (auto f : {MmsField::U, MmsField::V, MmsField::P, MmsField::Phi, MmsField::CPlus, MmsField::CMinus}) {
                const auto gr = mms.gradient(f, x, t);
                CHECK(std::abs(gr[0] - pr.dx(f, x, t, 0)) < 1e-8);
                CHECK(std::abs(gr[1] - pr.dx(f, x, t, 1)) < 1e-8);
                CHECK(std::abs(mms.time_derivative(f, x, t) - pr.dt(f, x, t)) < 1e-8);
            }
        }
    }
}

TEST_CASE("manufactured run converges at second order in space on a short interval") {
    MmsRunConfig base;
    base.t_end = 0.5;
    base.dt = 0.005;
    const auto study = run_mms_spatial({3, 4, 5}, base);
    for (const auto& r : study.rows) REQUIRE(r.ok);
    CHECK(study.slope_velocity > 1.8);
    CHECK(study.slope_potential > 1.8);
    CHECK(study.slope_c_plus > 1.8);
    CHECK(study.slope_c_minus > 1.8);
    CHECK(study.slope_pressure > 1.4);
    CHECK(study.rows.back().max_newton <= 3);
    CHECK(study.rows.back().time == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("temporal study flags runs that miss the reference final time") {
    MmsRunConfig base;
    base.level = 2;
    base.t_end = 0.1;
    const auto s = run_mms_temporal({0.03, 0.02}, base, 0.01);
    REQUIRE(s.reference);
    CHECK(s.rows[0].time == doctest::Approx(0.09));
    CHECK(s.rows[0].message == "final time differs from the reference run");
    CHECK(s.rows[1].message.empty());
    CHECK(s.rows[1].velocity_self > 0.0);
}

TEST_CASE("fitted slope of an exact power law") {
    CHECK(fitted_slope({0.1, 0.2, 0.4}, {0.01, 0.04, 0.16}) == doctest::Approx(2.0));
    CHECK(fitted_slope({1, 2, 4, 8}, {3, 3 * 8, 3 * 64, 3 * 512}) == doctest::Approx(3.0));
}

TEST_CASE("double layer equilibrium matches the Poisson-Boltzmann profile") {
    EdlConfig cfg;
    const auto res = run_edl_1d(cfg);
    REQUIRE(res.report.converged);
    REQUIRE(res.y.size() == 257);
    const oracle::PoissonBoltzmann pb(cfg.Lambda, -cfg.dphi, 0.0, 20000);
    double e[3] = {0, 0, 0}, n[3] = {0, 0, 0};
    for (std::size_t i = 0; i < res.y.size(); ++i) {
        const double psi = pb(res.y[i]);
        const double ref[3] = {psi + cfg.dphi, std::exp(-psi), std::exp(psi)};
        const double got[3] = {res.phi[i], res.c_plus[i], res.c_minus[i]};
        for (int k = 0; k < 3; ++k) {
            e[k] += (got[k] - ref[k]) * (got[k] - ref[k]);
            n[k] += ref[k] * ref[k];
        }
    }
    for (int k = 0; k < 3; ++k) CHECK(std::sqrt(e[k] / n[k]) < 0.01);
    // Cations accumulate at the low-potential wall.
    CHECK(res.c_plus.front() > 2.0);
    CHECK(res.c_minus.front() < 0.5);
}

TEST_CASE("double layer without applied potential stays uniform") {
    EdlConfig cfg;
    cfg.dphi = 0.0;
    cfg.cells = 64;
    const auto res = run_edl_1d(cfg);
    REQUIRE(res.report.converged);
    for (std::size_t i = 0; i < res.y.size(); ++i) {
        CHECK(std::abs(res.phi[i]) < 1e-12);
        CHECK(std::abs(res.c_plus[i] - 1.0) < 1e-12);
        CHECK(std::abs(res.c_minus[i] - 1.0) < 1e-12);
    }
}

TEST_CASE("double layer thickness scales with the Debye length") {
    EdlConfig a;
    a.Lambda = 0.05;
    EdlConfig b = a;
    b.Lambda = 0.025;
    const auto ra = run_edl_1d(a), rb = run_edl_1d(b);
    REQUIRE(ra.report.converged);
    REQUIRE(rb.report.converged);
    const double ratio = edl_thickness(ra.y, ra.c_plus) / edl_thickness(rb.y, rb.c_plus);
    CHECK(ratio > 1.8);
    CHECK(ratio < 2.2);
}

TEST_CASE("double layer rejects non power of two resolution") {
    EdlConfig cfg;
    cfg.cells = 100;
    CHECK_THROWS_AS(run_edl_1d(cfg), ConfigError);
}

TEST_CASE("carving without spheres keeps the full box") {
    CarvingConfig cfg;
    cfg.level = 4;
    const auto res = run_carving_demo(cfg);
    CHECK(res.active == 256);
    CHECK(res.intercepted == 0);
    CHECK(res.carved == 0);
    for (double v : res.potential) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("carving one sphere classifies elements by their corners") {
    CarvingConfig cfg;
    cfg.level = 5;
    const Sphere s{{0.43, 0.51, 0.0}, 0.23};
    cfg.spheres = {s};
    const auto res = run_carving_demo(cfg);
    const int n = 32;
    const double h = 1.0 / n;
    std::size_t active = 0, cut = 0, gone = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            int inside = 0;
            for (int a = 0; a < 2; ++a) {
                for (int b = 0; b < 2; ++b) {
                    const double x = (i + a) * h - s.center[0], y = (j + b) * h - s.center[1];
                    inside += std::sqrt(x * x + y * y) < s.radius ? 0 : 1;
                }
            }
            (inside == 4 ? active : inside == 0 ? gone : cut) += 1;
        }
    }
    CHECK(res.active == active);
    CHECK(res.intercepted == cut);
    CHECK(res.mesh.num_elements() == active + cut);
    CHECK(gone > 0);
    CHECK(res.carved > 0);
    CHECK(res.solve.status == SolveStatus::Converged);
    for (double v : res.potential) {
        CHECK(v >= -1e-9);
        CHECK(v <= 1.0 + 1e-9);
    }
}

TEST_CASE("carved annulus follows the logarithmic profile") {
    CarvingConfig cfg;
    cfg.level = 7;
    const Point c{0.5, 0.5, 0.0};
    const double r0 = 0.1, r1 = 0.45;
    cfg.spheres = {{c, r0}};
    cfg.outer = Sphere{c, r1};
    const auto res = run_carving_demo(cfg);
    REQUIRE(res.solve.status == SolveStatus::Converged);
    double emax = 0.0;
    for (double r = 0.15; r <= 0.40; r += 0.05) {
        for (int k = 0; k < 8; ++k) {
            const double th = 2 * std::numbers::pi * k / 8;
            const Point x{c[0] + r * std::cos(th), c[1] + r * std::sin(th), 0.0};
            const auto pv = evaluate(res.mesh, res.potential, 1, 0, x);
            REQUIRE(pv.found);
            const double ref = std::log(r / r1) / std::log(r0 / r1);
            emax = std::max(emax, std::abs(pv.value - ref));
        }
    }
    CHECK(emax < 0.05);
    // Radial monotonicity along one ray.
    double last = 2.0;
    for (double r = 0.12; r < 0.44; r += 0.02) {
        const auto pv = evaluate(res.mesh, res.potential, 1, 0, {c[0] + r, c[1] + 1e-3, 0.0});
        REQUIRE(pv.found);
        CHECK(pv.value < last);
        last = pv.value;
    }
}

TEST_CASE("carving rejects bad geometry") {
    CarvingConfig cfg;
    cfg.spheres = {{{0.5, 0.5, 0.0}, 0.0}};
    CHECK_THROWS_AS(run_carving_demo(cfg), ConfigError);
    CarvingConfig d;
    d.dim = 1;
    CHECK_THROWS_AS(run_carving_demo(d), ConfigError);
}

TEST_CASE("one second-order step from exact data has third-order local error") {
    // Spatially uniform concentration driven by a time-dependent source, so
    // the only error left is the time discretization.
    RootGrid grid;
    grid.dim = 2;
    const TreeMesh mesh = build_uniform(grid, 2);
    auto exact = [](double t) { return 1.0 + 0.5 * std::cos(2 * t); };
    const double t0 = 0.3;
    std::vector<double> err;
    for (double dt : {0.08, 0.04, 0.02, 0.01}) {
        StepperConfig sc;
        sc.dt = dt;
        sc.groups.species = {{0.0, 1.0}};
        sc.solve_ns = false;
        sc.pnp_bc = {{0, kLeft | kRight | kBottom | kTop, -1, [](const Point&, double) { return 0.0; }}};
        sc.species_forcing = {[](const Point&, double t) { return -std::sin(2 * t); }};
        Stepper stepper(mesh, sc);
        FieldState st;
        st.nspecies = 1;
        st.resize(mesh.num_nodes());
        for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
            st.pnp[n * 2 + 1] = exact(t0);
            st.pnp_prev[n * 2 + 1] = exact(t0 - dt);
        }
        st.step = 1;
        st.time = t0;
        REQUIRE(stepper.advance(st).ok);
        double e = 0.0;
        for (std::size_t n = 0; n < mesh.num_nodes(); ++n) e = std::max(e, std::abs(st.pnp[n * 2 + 1] - exact(t0 + dt)));
        err.push_back(e);
    }
    for (std::size_t i = 0; i + 1 < err.size(); ++i) {
        CHECK(err[i] / err[i + 1] > 7.0);
        CHECK(err[i] / err[i + 1] < 9.0);
    }
}

TEST_CASE("electroconvection boundary set covers every face and variable") {
    auto b = electroconvection_boundaries(20.0);
    CHECK_NOTHROW(validate_boundaries(b));
    StepperConfig sc;
    add_dirichlet_rules(b, sc);
    CHECK(sc.ns_bc.size() == 4);
    CHECK(sc.pnp_bc.size() == 5);
    const auto mesh = electroconvection_mesh({});
    const auto d = collect_dirichlet(mesh, 3, sc.pnp_bc, 0.0);
    for (const auto& [dof, val] : d) {
        const auto& x = mesh.node(dof / 3);
        if (dof % 3 == 0) CHECK(val == (x[1] > 0.5 ? 20.0 : 0.0));
    }

    b["bottom"].erase("c_minus");
    try {
        validate_boundaries(b);
        FAIL("missing condition accepted");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("c_minus") != std::string::npos);
        CHECK(msg.find("bottom") != std::string::npos);
    }
    auto c = electroconvection_boundaries(20.0);
    c["right"]["phi"] = {BcKind::Dirichlet, 1.0};
    CHECK_THROWS_AS(validate_boundaries(c), ConfigError);
    auto d2 = electroconvection_boundaries(20.0);
    d2["top"]["q"] = {};
    CHECK_THROWS_AS(validate_boundaries(d2), ConfigError);
}
