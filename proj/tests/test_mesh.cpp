#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ekdns/fem.hpp"
#include "ekdns/mesh.hpp"

using namespace ekdns;

namespace {

RootGrid unit_square() {
    RootGrid g;
    g.dim = 2;
    return g;
}

RootGrid unit_cube() {
    RootGrid g;
    g.dim = 3;
    return g;
}

/// Leaves i and j share a codimension-`codim` entity of positive measure.
bool touching(const TreeMesh& m, std::size_t i, std::size_t j, int codim_max) {
    const auto a = m.element_box(i);
    const auto b = m.element_box(j);
    const auto& g = m.grid();
    int touching_axes = 0;
    for (int k = 0; k < m.dim(); ++k) {
        const double len = g.extent(k);
        double best = -1.0;
        int touch = 0;
        const int shifts = g.periodic[k] ? 1 : 0;
        for (int s = -shifts; s <= shifts; ++s) {
            const double blo = b.lo[k] + s * len;
            const double bhi = b.hi[k] + s * len;
            const double overlap = std::min(a.hi[k], bhi) - std::max(a.lo[k], blo);
            if (overlap > 1e-12) {
                best = std::max(best, overlap);
            } else if (std::abs(overlap) < 1e-12) {
                touch = 1;
            }
        }
        if (best > 0) continue;
        if (!touch) return false;
        ++touching_axes;
    }
    return touching_axes >= 1 && touching_axes <= codim_max;
}

/// Exhaustive pairwise scan of the 2:1 condition.
bool brute_force_balanced(const TreeMesh& m) {
    const int codim = m.dim() == 3 ? 2 : 1;
    for (std::size_t i = 0; i < m.num_elements(); ++i) {
        for (std::size_t j = i + 1; j < m.num_elements(); ++j) {
            if (std::abs(m.level(i) - m.level(j)) > 1 && touching(m, i, j, codim)) return false;
        }
    }
    return true;
}

TreeMesh random_mesh(int dim, std::mt19937& rng, int max_level) {
    RootGrid g = dim == 2 ? unit_square() : unit_cube();
    auto m = build_uniform(g, 1, max_level);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> lv(2, max_level);
    std::vector<std::pair<Point, int>> seeds;
    for (int i = 0; i < 4; ++i) seeds.push_back({{u(rng), u(rng), dim == 3 ? u(rng) : 0.0}, lv(rng)});
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
    return refine(m, rule);
}

}  // namespace

TEST_CASE("uniform meshes have tensor-grid counts") {
    auto m0 = build_uniform(unit_square(), 0);
    CHECK(m0.num_elements() == 1);
    CHECK(m0.num_nodes() == 4);

    auto m3 = build_uniform(unit_square(), 3);
    CHECK(m3.num_elements() == 64);
    CHECK(m3.num_nodes() == 81);
    CHECK(m3.constraints().empty());

    auto c2 = build_uniform(unit_cube(), 2);
    CHECK(c2.num_elements() == 64);
    CHECK(c2.num_nodes() == 125);
}

TEST_CASE("level numbering follows the virtual root of the strip") {
    RootGrid g;
    g.dim = 2;
    g.count = {8, 1, 1};
    auto m = build_uniform(g, 10, 12);
    CHECK(m.level(0) == 10);
    CHECK(m.element_size(0) == doctest::Approx(8.0 / 1024.0));
    CHECK(m.num_elements() == 8u * 128u * 128u);
    CHECK_THROWS_AS(build_uniform(g, 13, 12), MeshError);
    CHECK_THROWS_AS(build_uniform(g, 2, 12), MeshError);
}

TEST_CASE("refining to the current level is idempotent") {
    auto m = build_uniform(unit_square(), 4);
    RefineRule r;
    r.max_level = 8;
    r.target = [](const Box&) { return 4; };
    auto m2 = refine(m, r);
    CHECK(m2.leaves() == m.leaves());
    CHECK(m2.nodes() == m.nodes());
}

TEST_CASE("disk refinement matches exhaustive cell intersection") {
    auto intersects = [](const Box& b) {
        const double cx = std::clamp(0.5, b.lo[0], b.hi[0]);
        const double cy = std::clamp(0.5, b.lo[1], b.hi[1]);
        return std::hypot(cx - 0.5, cy - 0.5) < 0.25;
    };
    RefineRule r;
    r.max_level = 4;
    r.target = [&](const Box& b) { return intersects(b) ? 4 : 2; };
    auto m = refine(build_uniform(unit_square(), 2), r);

    int expected = 0;
    for (int i = 0; i < 16; ++i) {
        for (int j = 0; j < 16; ++j) {
            // Refinement splits whole parents, so a level-4 cell exists iff its parent meets the disk.
            Box parent{{(i / 2) / 8.0, (j / 2) / 8.0, 0}, {(i / 2 + 1) / 8.0, (j / 2 + 1) / 8.0, 0}};
            if (intersects(parent)) ++expected;
        }
    }
    int fine = 0;
    for (std::size_t e = 0; e < m.num_elements(); ++e) {
        if (m.level(e) == 4) {
            ++fine;
        }
    }
    CHECK(fine == expected);
    CHECK(brute_force_balanced(m));
}

TEST_CASE("balance refines coarse neighbours of a deep cell") {
    auto m = build_uniform(unit_square(), 2, 8);
    RefineRule r;
    r.max_level = 5;
    r.target = [](const Box& b) {
        return (0.3 >= b.lo[0] && 0.3 <= b.hi[0] && 0.3 >= b.lo[1] && 0.3 <= b.hi[1]) ? 5 : 0;
    };
    auto refined = refine(m, r);
    CHECK(brute_force_balanced(refined));
    CHECK(is_balanced(refined));
    int max_level = 0;
    for (std::size_t e = 0; e < refined.num_elements(); ++e) max_level = std::max(max_level, refined.level(e));
    CHECK(max_level == 5);

    auto again = balance_2to1(refined);
    CHECK(again.leaves() == refined.leaves());
    auto uni = build_uniform(unit_square(), 3);
    CHECK(balance_2to1(uni).leaves() == uni.leaves());
}

TEST_CASE("unbalanced input is rejected by enumeration") {
    RootGrid g = unit_square();
    g.count = {2, 1, 1};
    auto m = build_uniform(g, 1, 8);
    RefineRule r;
    r.max_level = 8;
    r.target = [](const Box& b) {
        return 0.99 >= b.lo[0] && 0.99 <= b.hi[0] && 0.75 >= b.lo[1] && 0.75 <= b.hi[1] ? 4 : 1;
    };
    auto raw = refine_leaves(m, r);
    CHECK_FALSE(is_balanced(raw));
    CHECK_FALSE(brute_force_balanced(raw));
    CHECK_THROWS_AS(enumerate_nodes(raw), MeshError);
    CHECK(is_balanced(balance_2to1(raw)));
}

TEST_CASE("single coarse-fine interface produces one hanging node") {
    RootGrid g = unit_square();
    g.count = {2, 1, 1};
    auto m = build_uniform(g, 1, 8);
    RefineRule r;
    r.max_level = 2;
    r.target = [](const Box& b) { return b.lo[0] < 1.0 ? 2 : 1; };
    auto m2 = refine(m, r);
    REQUIRE(m2.num_elements() == 5);
    REQUIRE(m2.constraints().size() == 1);
    const auto& hc = m2.constraints()[0];
    CHECK(m2.node(hc.node)[0] == doctest::Approx(1.0));
    CHECK(m2.node(hc.node)[1] == doctest::Approx(0.5));
    REQUIRE(hc.masters.size() == 2);
    for (const auto& [n, w] : hc.masters) {
        CHECK(w == doctest::Approx(0.5));
        CHECK(m2.node(n)[0] == doctest::Approx(1.0));
    }
}

TEST_CASE("periodic strip merges left and right boundary nodes") {
    RootGrid g;
    g.dim = 2;
    g.count = {8, 1, 1};
    g.periodic = {true, false, false};
    auto m = build_uniform(g, 5, 8);
    RootGrid gn = g;
    gn.periodic = {false, false, false};
    auto open = build_uniform(gn, 5, 8);

    std::set<std::pair<long, long>> keys;
    int left = 0, right = 0;
    for (const auto& p : open.nodes()) {
        const long ix = std::lround(p[0] * 4.0);
        const long iy = std::lround(p[1] * 4.0);
        keys.insert({ix % 32, iy});
        if (ix == 0) ++left;
        if (ix == 32) ++right;
    }
    CHECK(left == right);
    CHECK(m.num_nodes() == keys.size());
    CHECK(m.num_nodes() == open.num_nodes() - static_cast<std::size_t>(right));
    CHECK(m.periodic_pairs().size() == static_cast<std::size_t>(right));
    for (const auto& [n, image] : m.periodic_pairs()) {
        CHECK(m.node(n)[0] == doctest::Approx(0.0));
        CHECK(image[0] == doctest::Approx(8.0));
        CHECK(m.node(n)[1] == doctest::Approx(image[1]));
    }
}

TEST_CASE("randomized meshes satisfy the tree invariants") {
    std::mt19937 rng(1234);
    for (int trial = 0; trial < 12; ++trial) {
        const int dim = trial % 3 == 2 ? 3 : 2;
        const int max_level = dim == 3 ? 4 : 6;
        auto m = random_mesh(dim, rng, max_level);
        CHECK(brute_force_balanced(m));

        // Tiling: paint the finest grid and require every cell covered exactly once.
        const int n = 1 << max_level;
        std::vector<int> paint(static_cast<std::size_t>(std::pow(n, dim)), 0);
        for (std::size_t e = 0; e < m.num_elements(); ++e) {
            const auto b = m.element_box(e);
            CHECK(m.element_size(e) == doctest::Approx(std::ldexp(1.0, -m.level(e))));
            const int lo0 = std::lround(b.lo[0] * n), hi0 = std::lround(b.hi[0] * n);
            const int lo1 = std::lround(b.lo[1] * n), hi1 = std::lround(b.hi[1] * n);
            const int lo2 = dim == 3 ? std::lround(b.lo[2] * n) : 0, hi2 = dim == 3 ? std::lround(b.hi[2] * n) : 1;
            for (int k = lo2; k < hi2; ++k) {
                for (int j = lo1; j < hi1; ++j) {
                    for (int i = lo0; i < hi0; ++i) ++paint[(static_cast<std::size_t>(k) * n + j) * n + i];
                }
            }
        }
        CHECK(std::all_of(paint.begin(), paint.end(), [](int c) { return c == 1; }));

        for (const auto& hc : m.constraints()) {
            double s = 0.0;
            for (const auto& [node, w] : hc.masters) {
                s += w;
                CHECK_FALSE(m.is_hanging(node));
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
        }
    }
}

TEST_CASE("constrained fields are continuous across coarse-fine interfaces") {
    std::mt19937 rng(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 6; ++trial) {
        const int dim = trial < 4 ? 2 : 3;
        auto m = random_mesh(dim, rng, dim == 3 ? 4 : 6);
        Vec field(m.num_nodes());
        for (auto& v : field) v = u(rng);
        apply_constraints(m, 1, field);

        auto eval_in = [&](std::size_t e, const Point& x) {
            const auto geo = element_geometry(m, e);
            Point xi = geo.inverse_map(x);
            double vals[kMaxCorners];
            shape_eval(m.dim(), xi, vals, nullptr);
            double s = 0.0;
            for (int a = 0; a < m.corners_per_element(); ++a) s += vals[a] * field[m.element_nodes(e)[a]];
            return s;
        };

        int interfaces = 0;
        double worst = 0.0;
        for (std::size_t i = 0; i < m.num_elements(); ++i) {
            for (std::size_t j = 0; j < m.num_elements(); ++j) {
                if (m.level(j) != m.level(i) + 1 || !touching(m, i, j, 1)) continue;
                const auto a = m.element_box(i);
                const auto b = m.element_box(j);
                ++interfaces;
                for (int s = 0; s < 5; ++s) {
                    Point x{0, 0, 0};
                    for (int k = 0; k < dim; ++k) {
                        const double lo = std::max(a.lo[k], b.lo[k]);
                        const double hi = std::min(a.hi[k], b.hi[k]);
                        x[k] = lo + (hi - lo) * (0.5 + 0.5 * u(rng));
                    }
                    worst = std::max(worst, std::abs(eval_in(i, x) - eval_in(j, x)));
                }
            }
        }
        CHECK(interfaces > 0);
        CHECK(worst < 1e-13);
    }
}

TEST_CASE("sphere carving matches an exhaustive corner test") {
    const Point c{0.5, 0.5, 0.5};
    auto outside_sphere = [c](const Point& p) {
        return std::hypot(p[0] - c[0], p[1] - c[1], p[2] - c[2]) >= 0.3;
    };
    auto m = classify(build_uniform(unit_cube(), 4), GeometryClassifier{outside_sphere});
    int intercepted = 0, inactive = 0;
    for (int k = 0; k < 16; ++k) {
        for (int j = 0; j < 16; ++j) {
            for (int i = 0; i < 16; ++i) {
                int in = 0;
                for (int cnr = 0; cnr < 8; ++cnr) {
                    Point p{(i + (cnr & 1)) / 16.0, (j + ((cnr >> 1) & 1)) / 16.0, (k + ((cnr >> 2) & 1)) / 16.0};
                    if (outside_sphere(p)) ++in;
                }
                if (in == 0) ++inactive;
                if (in > 0 && in < 8) ++intercepted;
            }
        }
    }
    int got = 0;
    for (auto s : m.statuses()) got += s == ElementStatus::Intercepted;
    CHECK(got == intercepted);
    CHECK(static_cast<int>(m.carved().size()) == inactive);
    CHECK(static_cast<int>(m.num_elements()) == 4096 - inactive);
    CHECK(intercepted > 0);
}

TEST_CASE("trivial geometries keep every element active") {
    auto all = classify(build_uniform(unit_square(), 3), GeometryClassifier{[](const Point&) { return true; }});
    CHECK(all.num_elements() == 64);
    CHECK(std::all_of(all.statuses().begin(), all.statuses().end(),
                      [](ElementStatus s) { return s == ElementStatus::Active; }));
    auto half = classify(build_uniform(unit_square(), 3), GeometryClassifier{[](const Point& p) { return p[0] >= 0.0; }});
    CHECK(half.num_elements() == 64);
    CHECK(half.carved().empty());
    CHECK_THROWS_AS(classify(build_uniform(unit_square(), 2), GeometryClassifier{[](const Point&) { return false; }}),
                    MeshError);
}

TEST_CASE("classification is monotone in the domain") {
    auto base = build_uniform(unit_square(), 5);
    for (double r : {0.1, 0.2, 0.3}) {
        auto small = classify(base, GeometryClassifier{[r](const Point& p) { return std::hypot(p[0] - 0.5, p[1] - 0.5) < r + 0.1; }});
        auto large = classify(base, GeometryClassifier{[r](const Point& p) { return std::hypot(p[0] - 0.5, p[1] - 0.5) < r + 0.2; }});
        std::set<std::pair<long, long>> kept;
        for (const auto& o : large.leaves()) kept.insert({o.anchor[0], o.anchor[1]});
        for (std::size_t e = 0; e < small.num_elements(); ++e) {
            CHECK(kept.count({small.leaves()[e].anchor[0], small.leaves()[e].anchor[1]}) == 1);
        }
    }
}

TEST_CASE("enumeration is deterministic") {
    std::mt19937 r1(5), r2(5);
    auto a = random_mesh(2, r1, 6);
    auto b = random_mesh(2, r2, 6);
    REQUIRE(a.num_nodes() == b.num_nodes());
    CHECK(a.nodes() == b.nodes());
    for (std::size_t e = 0; e < a.num_elements(); ++e) {
        for (int c = 0; c < 4; ++c) CHECK(a.element_nodes(e)[c] == b.element_nodes(e)[c]);
    }
}

TEST_CASE("point location finds the owning leaf") {
    std::mt19937 rng(9);
    auto m = random_mesh(2, rng, 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        Point x{u(rng), u(rng), 0};
        const int e = m.locate(x);
        REQUIRE(e >= 0);
        const auto b = m.element_box(e);
        CHECK(x[0] >= b.lo[0]);
        CHECK(x[0] <= b.hi[0]);
        CHECK(x[1] >= b.lo[1]);
        CHECK(x[1] <= b.hi[1]);
    }
    CHECK(m.locate({1.0, 1.0, 0}) >= 0);
    CHECK(m.locate({1.5, 0.5, 0}) == -1);
}

TEST_CASE("boundary tags mark the box faces") {
    auto m = build_uniform(unit_square(), 2);
    int bottom = 0, top = 0, left = 0, right = 0;
    for (std::size_t n = 0; n < m.num_nodes(); ++n) {
        bottom += (m.boundary_tags(n) & kBottom) != 0;
        top += (m.boundary_tags(n) & kTop) != 0;
        left += (m.boundary_tags(n) & kLeft) != 0;
        right += (m.boundary_tags(n) & kRight) != 0;
    }
    CHECK(bottom == 5);
    CHECK(top == 5);
    CHECK(left == 5);
    CHECK(right == 5);
    CHECK(boundary_tag_from_name("top") == kTop);
    CHECK_THROWS_AS(boundary_tag_from_name("middle"), MeshError);
}
