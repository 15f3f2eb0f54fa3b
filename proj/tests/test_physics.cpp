#include <doctest.h>

#include <cmath>
#include <random>

#include "ekdns/physics.hpp"
#include "oracles.hpp"

using namespace ekdns;

namespace {

TreeMesh square(int level, bool periodic_x = false) {
    RootGrid g;
    g.dim = 2;
    g.periodic[0] = periodic_x;
    return build_uniform(g, level);
}

Vec random_vec(std::size_t n, unsigned seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Vec v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

NondimGroups test_groups() {
    NondimGroups g;
    g.Sc = 2.0;
    g.kappa = 0.7;
    g.Lambda = 0.3;
    g.species = {{1.0, 1.0}, {-1.0, 0.6}};
    return g;
}

struct PnpFixture {
    NondimGroups groups = test_groups();
    Vec vt, pk, pkm1;
    PnpInputs in;

    PnpFixture(const TreeMesh& m, unsigned seed) {
        vt = random_vec(m.num_nodes() * 3, seed);
        pk = random_vec(m.num_nodes() * 3, seed + 1, 0.5, 1.5);
        pkm1 = random_vec(m.num_nodes() * 3, seed + 2, 0.5, 1.5);
        apply_constraints(m, 3, vt);
        apply_constraints(m, 3, pk);
        apply_constraints(m, 3, pkm1);
        in.groups = &groups;
        in.dt = 0.05;
        in.vtilde = &vt;
        in.pnp_k = &pk;
        in.pnp_km1 = &pkm1;
    }
};

/// max |J - J_fd| / max |J| with central differences of the assembled residual.
/// Hanging dofs are skipped; perturbing a master updates its dependants.
double jacobian_fd_error(const TreeMesh& m, const PnpInputs& in, Vec U) {
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
    return emax / amax;
}

}  // namespace

TEST_CASE("nondimensional groups") {
    SUBCASE("synthetic units give Sc = 1") {
        DimensionalInputs in;
        in.eta = 1.0;
        in.rho = 1.0;
        in.D = {1.0, 1.0};
        CHECK(nondimensionalize(in).groups.Sc == doctest::Approx(1.0));
    }
    SUBCASE("equal diffusivities scale to one") {
        DimensionalInputs in;
        in.D = {2e-9, 2e-9, 2e-9};
        in.z = {1, -1, 2};
        in.c_initial = {1, 3, 1};
        auto r = nondimensionalize(in);
        for (const auto& s : r.groups.species) CHECK(s.D == 1.0);
        CHECK(r.ionic_strength == doctest::Approx(0.5 * (1 + 3 + 4)));
    }
    SUBCASE("water-like inputs") {
        DimensionalInputs in;
        auto r = nondimensionalize(in);
        // Values from a separate arithmetic evaluation of the defining formulas.
        CHECK(r.groups.Sc == doctest::Approx(890.0).epsilon(1e-12));
        CHECK(r.groups.kappa == doctest::Approx(0.5149311482035251).epsilon(1e-12));
        CHECK(r.debye_length == doctest::Approx(9.617040498652636e-09).epsilon(1e-12));
        CHECK(r.groups.Lambda == doctest::Approx(0.009617040498652637).epsilon(1e-12));
    }
    SUBCASE("unequal diffusivities use the mean") {
        DimensionalInputs in;
        in.D = {1e-9, 3e-9};
        auto r = nondimensionalize(in);
        CHECK(r.mean_diffusivity == doctest::Approx(2e-9));
        CHECK(r.groups.species[0].D == doctest::Approx(0.5));
        CHECK(r.groups.species[1].D == doctest::Approx(1.5));
    }
    SUBCASE("zero ionic strength is rejected") {
        DimensionalInputs in;
        in.c_initial = {0.0, 0.0};
        CHECK_THROWS_AS(nondimensionalize(in), ConfigError);
        in = DimensionalInputs{};
        in.D = {1e-9};
        CHECK_THROWS_AS(nondimensionalize(in), ConfigError);
    }
    SUBCASE("group validation") {
        NondimGroups g;
        CHECK_NOTHROW(g.validate());
        g.Lambda = 0.0;
        CHECK_THROWS_AS(g.validate(), ConfigError);
        g = NondimGroups{};
        g.species[1].D = -1;
        CHECK_THROWS_AS(g.validate(), ConfigError);
    }
}

TEST_CASE("stabilization parameters") {
    NondimGroups grp;
    SUBCASE("time term only") {
        auto t = compute_taus(2, 0.0, {0, 0, 0}, 2.0, grp);
        CHECK(t.tau_m == doctest::Approx(1.0));
        CHECK(t.tau_c[0] == doctest::Approx(1.0));
    }
    SUBCASE("mesh tensor") {
        ElementGeometry geo{2, {0, 0, 0}, 0.5};
        CHECK(geo.g_diag() == 16.0);
    }
    SUBCASE("reference values") {
        ElementGeometry geo{2, {0, 0, 0}, 0.125};
        auto t = compute_taus(geo, {1, 0, 0}, 0.01, grp);
        CHECK(t.tau_m == doctest::Approx(0.0010998391712785285).epsilon(1e-13));
        CHECK(t.tau_sol == doctest::Approx(1.7758278219255943).epsilon(1e-13));
        CHECK(t.tau_c[0] == doctest::Approx(0.0010998391712785285).epsilon(1e-13));
    }
    SUBCASE("positive and decreasing in speed and 1/dt") {
        double prev = 1e300;
        for (double s : {0.0, 0.5, 1.0, 4.0, 20.0}) {
            auto t = compute_taus(2, 64.0, {s, -s, 0}, 0.1, grp);
            CHECK(t.tau_m > 0.0);
            CHECK(t.tau_m < prev);
            prev = t.tau_m;
        }
        prev = 1e300;
        for (double dt : {1.0, 0.1, 0.01, 0.001}) {
            auto t = compute_taus(3, 64.0, {1, 0, 0}, dt, grp);
            CHECK(t.tau_m < prev);
            CHECK(t.tau_c[1] > 0.0);
            prev = t.tau_m;
        }
    }
}

TEST_CASE("quiescent fluid is a fixed point of the NS system") {
    auto m = square(3);
    NondimGroups grp = test_groups();
    const std::size_t nn = m.num_nodes();
    Vec zero(nn * 3, 0.0);
    Vec pnp(nn * 3);
    auto rnd = random_vec(nn, 11);
    for (std::size_t n = 0; n < nn; ++n) {
        pnp[n * 3] = rnd[n];
        pnp[n * 3 + 1] = pnp[n * 3 + 2] = 1.0 + 0.3 * std::sin(7.0 * n);
    }
    NsInputs in;
    in.groups = &grp;
    in.dt = 0.01;
    in.vtilde = &zero;
    in.ns_k = &zero;
    in.ns_km1 = &zero;
    in.pnp = &pnp;
    Assembler as(m, 3);
    auto sys = as.make_system();
    as.assemble(ns_kernel(in), sys);
    CHECK(norm_inf(sys.rhs) == 0.0);

    // v = 0, p = const is in the null space of the unconstrained operator.
    Vec x(nn * 3, 0.0), y(nn * 3);
    for (std::size_t n = 0; n < nn; ++n) x[n * 3 + 2] = 3.5;
    sys.matrix.multiply(x, y);
    CHECK(norm_inf(y) < 1e-12);
}

TEST_CASE("electroneutral charge gives exactly zero body force") {
    auto m = square(3);
    NondimGroups grp = test_groups();
    const std::size_t nn = m.num_nodes();
    Vec v = random_vec(nn * 3, 21);
    Vec pnp = random_vec(nn * 3, 22);
    for (std::size_t n = 0; n < nn; ++n) pnp[n * 3 + 2] = pnp[n * 3 + 1];
    NsInputs in;
    in.groups = &grp;
    in.dt = 0.01;
    in.vtilde = &v;
    in.ns_k = &v;
    in.ns_km1 = &v;
    Assembler as(m, 3);
    auto a = as.make_system(), b = as.make_system();
    as.assemble(ns_kernel(in), a);
    in.pnp = &pnp;
    as.assemble(ns_kernel(in), b);
    CHECK(a.rhs == b.rhs);

    // A genuine charge changes the momentum rows.
    for (std::size_t n = 0; n < nn; ++n) pnp[n * 3 + 2] = 0.5 * pnp[n * 3 + 1];
    as.assemble(ns_kernel(in), b);
    CHECK(a.rhs != b.rhs);
}

TEST_CASE("PNP Jacobian matches central differences") {
    for (int level : {1, 2, 3}) {
        auto m = square(level);
        PnpFixture fx(m, 100 + level);
        Vec U = random_vec(m.num_nodes() * 3, 200 + level, 0.2, 2.0);
        CAPTURE(level);
        CHECK(jacobian_fd_error(m, fx.in, U) < 1e-6);
    }
    SUBCASE("3x3 elements, first-order step") {
        RootGrid g;
        g.count = {3, 3, 1};
        g.root_size = 1.0 / 3;
        auto m = build_uniform(g, 2);
        PnpFixture fx(m, 7);
        fx.in.bdf = {1, 1.0, -1.0, 0.0};
        fx.in.pnp_km1 = nullptr;
        Vec U = random_vec(m.num_nodes() * 3, 8, 0.2, 2.0);
        CHECK(jacobian_fd_error(m, fx.in, U) < 1e-6);
    }
    SUBCASE("hanging nodes and periodic wrap") {
        RootGrid g;
        g.periodic[0] = true;
        RefineRule r;
        r.max_level = 3;
        r.target = [](const Box& b) { return b.lo[0] < 0.3 && b.lo[1] < 0.3 ? 3 : 1; };
        auto m = refine(build_uniform(g, 1), r);
        REQUIRE(!m.constraints().empty());
        PnpFixture fx(m, 9);
        Vec U = random_vec(m.num_nodes() * 3, 10, 0.2, 2.0);
        apply_constraints(m, 3, U);
        CHECK(jacobian_fd_error(m, fx.in, U) < 1e-6);
    }
    SUBCASE("steady form") {
        auto m = square(2);
        PnpFixture fx(m, 12);
        fx.in.steady = true;
        Vec U = random_vec(m.num_nodes() * 3, 13, 0.2, 2.0);
        CHECK(jacobian_fd_error(m, fx.in, U) < 1e-6);
    }
}

TEST_CASE("potential block without ions is a symmetric scaled Laplacian") {
    auto m = square(2);
    PnpFixture fx(m, 30);
    Vec U = random_vec(m.num_nodes() * 3, 31);
    for (std::size_t n = 0; n < m.num_nodes(); ++n) U[n * 3 + 1] = U[n * 3 + 2] = 0.0;
    Assembler as(m, 3);
    auto sys = as.make_system();
    as.assemble(pnp_kernel(fx.in, U), sys);
    const double s = 2 * fx.groups.Lambda * fx.groups.Lambda;
    for (std::size_t i = 0; i < m.num_nodes(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m.num_nodes(); ++j) {
            const double aij = sys.matrix.at(i * 3, j * 3);
            CHECK(aij == doctest::Approx(sys.matrix.at(j * 3, i * 3)).epsilon(1e-14));
            row += aij;
        }
        CHECK(std::abs(row) < 1e-13 * s);
        CHECK(sys.matrix.at(i * 3, i * 3) > 0.0);
    }
    // Diagonal of the 2-D bilinear stiffness at an interior node is 8/3.
    const int centre = m.locate({0.5, 0.5, 0});
    REQUIRE(centre >= 0);
    int inode = -1;
    for (std::size_t n = 0; n < m.num_nodes(); ++n) {
        if (std::abs(m.node(n)[0] - 0.5) < 1e-12 && std::abs(m.node(n)[1] - 0.5) < 1e-12) inode = static_cast<int>(n);
    }
    REQUIRE(inode >= 0);
    CHECK(sys.matrix.at(inode * 3, inode * 3) == doctest::Approx(s * 8.0 / 3.0));
}

TEST_CASE("uniform electroneutral equilibrium has zero PNP residual") {
    auto m = square(3);
    NondimGroups grp;
    Vec U(m.num_nodes() * 3, 1.0);
    for (std::size_t n = 0; n < m.num_nodes(); ++n) U[n * 3] = 0.0;
    PnpInputs in;
    in.groups = &grp;
    in.steady = true;
    Assembler as(m, 3);
    Vec F(as.num_dofs());
    as.assemble_vector(pnp_residual(in, U), F);
    CHECK(norm_inf(F) < 1e-15);
    in.steady = false;
    in.pnp_k = &U;
    in.pnp_km1 = &U;
    in.dt = 0.1;
    as.assemble_vector(pnp_residual(in, U), F);
    CHECK(norm_inf(F) < 1e-14);
}

TEST_CASE("Boltzmann equilibrium residual decays at second order") {
    const double lambda = 0.5;
    oracle::PoissonBoltzmann pb(lambda, 0.0, 1.0, 100000);
    NondimGroups grp;
    grp.Lambda = lambda;
    std::vector<double> hs, res;
    for (int level = 5; level <= 8; ++level) {
        auto m = square(level, true);
        Vec U(m.num_nodes() * 3);
        for (std::size_t n = 0; n < m.num_nodes(); ++n) {
            const double phi = pb(m.node(n)[1]);
            U[n * 3] = phi;
            U[n * 3 + 1] = std::exp(-phi);
            U[n * 3 + 2] = std::exp(phi);
        }
        PnpInputs in;
        in.groups = &grp;
        in.steady = true;
        Assembler as(m, 3);
        Vec F(as.num_dofs());
        as.assemble_vector(pnp_residual(in, U), F);
        const double h = std::ldexp(1.0, -level);
        double r = 0.0;
        for (std::size_t n = 0; n < m.num_nodes(); ++n) {
            if (m.boundary_tags(n) & (kBottom | kTop)) continue;
            for (int c = 0; c < 3; ++c) r = std::max(r, std::abs(F[n * 3 + c]) / (h * h));
        }
        hs.push_back(h);
        res.push_back(r);
    }
    const double slope = oracle::fitted_slope(hs, res);
    CAPTURE(res[0]);
    CAPTURE(res[3]);
    CHECK(slope > 1.8);
    CHECK(slope < 2.3);
}

TEST_CASE("boundary flux") {
    auto m = square(3, true);
    NondimGroups grp;
    Vec U(m.num_nodes() * 3, 1.0);
    for (std::size_t n = 0; n < m.num_nodes(); ++n) U[n * 3] = 0.0;
    auto f = boundary_flux(m, U, grp, "top");
    CHECK(std::abs(f.species[0]) < 1e-14);
    CHECK(std::abs(f.net) < 1e-14);

    const double E = 1.7;
    for (std::size_t n = 0; n < m.num_nodes(); ++n) U[n * 3] = -E * m.node(n)[1];
    f = boundary_flux(m, U, grp, "top");
    CHECK(std::abs(f.net) == doctest::Approx(2 * E));
    CHECK(f.species[0] == doctest::Approx(E));
    f = boundary_flux(m, U, grp, kBottom);
    CHECK(std::abs(f.net) == doctest::Approx(2 * E));

    CHECK_THROWS_AS(boundary_flux(m, U, grp, "left"), MeshError);
    CHECK_THROWS_AS(boundary_flux(m, U, grp, "front"), MeshError);
    CHECK_THROWS(boundary_flux(m, U, grp, "nowhere"));
}

TEST_CASE("integrals and charge density") {
    auto m = square(2);
    NondimGroups grp;
    Vec U(m.num_nodes() * 3);
    for (std::size_t n = 0; n < m.num_nodes(); ++n) {
        U[n * 3] = m.node(n)[0];
        U[n * 3 + 1] = 2.0;
        U[n * 3 + 2] = 0.5;
    }
    CHECK(integrate(m, U, 3, 0) == doctest::Approx(0.5));
    CHECK(integrate(m, U, 3, 1) == doctest::Approx(2.0));
    auto rho = charge_density(U, grp);
    REQUIRE(rho.size() == m.num_nodes());
    CHECK(rho[0] == doctest::Approx(1.5));
}

TEST_CASE("discrete divergence of a solenoidal interpolant shrinks with refinement") {
    std::vector<double> hs, div;
    for (int level = 3; level <= 6; ++level) {
        auto m = square(level);
        Vec v(m.num_nodes() * 3, 0.0);
        for (std::size_t n = 0; n < m.num_nodes(); ++n) {
            const double x = m.node(n)[0], y = m.node(n)[1];
            // Curl of psi = x^2 y^3 + sin(x + 2y).
            v[n * 3] = 3 * x * x * y * y + 2 * std::cos(x + 2 * y);
            v[n * 3 + 1] = -(2 * x * y * y * y + std::cos(x + 2 * y));
        }
        hs.push_back(std::ldexp(1.0, -level));
        div.push_back(divergence_residual(m, v));
    }
    CHECK(div[0] > 1e-8);
    for (std::size_t i = 1; i < div.size(); ++i) CHECK(div[i] < div[i - 1]);
}
