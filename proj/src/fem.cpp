#include "ekdns/fem.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <string>
#include <thread>

namespace ekdns {

void shape_eval(int dim, const Point& xi, double* values, std::array<double, 3>* grads) {
    const int nn = 1 << dim;
    for (int a = 0; a < nn; ++a) {
        double f[3] = {1, 1, 1};
        double d[3] = {0, 0, 0};
        for (int k = 0; k < dim; ++k) {
            const double s = ((a >> k) & 1) ? 1.0 : -1.0;
            f[k] = 0.5 * (1.0 + s * xi[k]);
            d[k] = 0.5 * s;
        }
        double v = 1.0;
        for (int k = 0; k < dim; ++k) v *= f[k];
        values[a] = v;
        if (grads) {
            grads[a] = {0, 0, 0};
            for (int k = 0; k < dim; ++k) {
                double g = d[k];
                for (int j = 0; j < dim; ++j) {
                    if (j != k) g *= f[j];
                }
                grads[a][k] = g;
            }
        }
    }
}

std::vector<std::pair<double, double>> gauss_legendre(int n) {
    switch (n) {
        case 1: return {{0.0, 2.0}};
        case 2: {
            const double p = 1.0 / std::sqrt(3.0);
            return {{-p, 1.0}, {p, 1.0}};
        }
        case 3: {
            const double p = std::sqrt(0.6);
            return {{-p, 5.0 / 9.0}, {0.0, 8.0 / 9.0}, {p, 5.0 / 9.0}};
        }
        case 4: {
            const double a = std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(1.2));
            const double b = std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(1.2));
            const double wa = (18.0 + std::sqrt(30.0)) / 36.0;
            const double wb = (18.0 - std::sqrt(30.0)) / 36.0;
            return {{-b, wb}, {-a, wa}, {a, wa}, {b, wb}};
        }
        default: throw std::invalid_argument("unsupported Gauss rule size " + std::to_string(n));
    }
}

const ReferenceElement& ReferenceElement::get(int dim, int points_per_axis) {
    static std::map<std::pair<int, int>, std::unique_ptr<ReferenceElement>> cache = [] {
        std::map<std::pair<int, int>, std::unique_ptr<ReferenceElement>> c;
        for (int d = 2; d <= 3; ++d) {
            for (int p = 1; p <= 4; ++p) {
                auto r = std::make_unique<ReferenceElement>();
                r->dim = d;
                r->num_nodes = 1 << d;
                r->points_per_axis = p;
                const auto rule = gauss_legendre(p);
                const int nq = d == 2 ? p * p : p * p * p;
                for (int q = 0; q < nq; ++q) {
                    Point xi{0, 0, 0};
                    double w = 1.0;
                    int rem = q;
                    for (int k = 0; k < d; ++k) {
                        xi[k] = rule[rem % p].first;
                        w *= rule[rem % p].second;
                        rem /= p;
                    }
                    r->points.push_back(xi);
                    r->weights.push_back(w);
                    double vals[kMaxCorners];
                    std::array<double, 3> gr[kMaxCorners];
                    shape_eval(d, xi, vals, gr);
                    for (int a = 0; a < r->num_nodes; ++a) {
                        r->shape.push_back(vals[a]);
                        r->ref_grad.push_back(gr[a]);
                    }
                }
                c.emplace(std::make_pair(d, p), std::move(r));
            }
        }
        return c;
    }();
    auto it = cache.find({dim, points_per_axis});
    if (it == cache.end()) throw std::invalid_argument("unsupported reference element");
    return *it->second;
}

double ElementGeometry::jacobian() const { return std::pow(0.5 * h, dim); }

Point ElementGeometry::map(const Point& xi) const {
    Point x = lo;
    for (int k = 0; k < dim; ++k) x[k] = lo[k] + 0.5 * h * (xi[k] + 1.0);
    return x;
}

Point ElementGeometry::inverse_map(const Point& x) const {
    Point xi{0, 0, 0};
    for (int k = 0; k < dim; ++k) xi[k] = 2.0 * (x[k] - lo[k]) / h - 1.0;
    return xi;
}

void ElementQuad::reinit(const ReferenceElement& ref, const ElementGeometry& geo) {
    dim = ref.dim;
    nq = ref.num_points();
    nn = ref.num_nodes;
    shape = ref.shape.data();
    grad.resize(ref.ref_grad.size());
    jxw.resize(nq);
    x.resize(nq);
    const double s = 2.0 / geo.h;
    const double jac = geo.jacobian();
    for (std::size_t i = 0; i < grad.size(); ++i) {
        for (int k = 0; k < 3; ++k) grad[i][k] = ref.ref_grad[i][k] * s;
    }
    for (int q = 0; q < nq; ++q) {
        jxw[q] = ref.weights[q] * jac;
        x[q] = geo.map(ref.points[q]);
    }
}

ElementGeometry element_geometry(const TreeMesh& mesh, std::size_t e) {
    ElementGeometry g;
    g.dim = mesh.dim();
    g.lo = mesh.element_box(e).lo;
    g.h = mesh.element_size(e);
    return g;
}

Assembler::Assembler(const TreeMesh& mesh, int ncomp) : mesh_(&mesh), ncomp_(ncomp) {
    if (!mesh.enumerated()) throw MeshError("assembly requires an enumerated mesh");
    if (ncomp < 1) throw SolverError("component count must be positive");
    const std::size_t nnodes = mesh.num_nodes();
    const int nc = mesh.corners_per_element();
    std::vector<std::set<int>> node_graph(nnodes);
    maps_.resize(mesh.num_elements());
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        auto& em = maps_[e];
        const int* nodes = mesh.element_nodes(e);
        em.corner.resize(nc);
        for (int a = 0; a < nc; ++a) {
            for (const auto& [m, w] : mesh.masters(nodes[a])) {
                auto it = std::find(em.gnodes.begin(), em.gnodes.end(), m);
                int idx;
                if (it == em.gnodes.end()) {
                    idx = static_cast<int>(em.gnodes.size());
                    em.gnodes.push_back(m);
                } else {
                    idx = static_cast<int>(it - em.gnodes.begin());
                }
                em.corner[a].emplace_back(idx, w);
            }
            if (mesh.is_hanging(nodes[a])) em.plain = false;
        }
        if (em.plain) {
            // Duplicate corners (periodic wrap of a single-element axis) also need the general path.
            em.plain = static_cast<int>(em.gnodes.size()) == nc;
        }
        for (int i : em.gnodes) {
            for (int j : em.gnodes) node_graph[i].insert(j);
        }
    }
    for (std::size_t n = 0; n < nnodes; ++n) node_graph[n].insert(static_cast<int>(n));

    pattern_.assign(nnodes * ncomp_, {});
    for (std::size_t n = 0; n < nnodes; ++n) {
        std::vector<int> cols;
        cols.reserve(node_graph[n].size() * ncomp_);
        for (int m : node_graph[n]) {
            for (int c = 0; c < ncomp_; ++c) cols.push_back(m * ncomp_ + c);
        }
        for (int c = 0; c < ncomp_; ++c) pattern_[n * ncomp_ + c] = cols;
    }
    template_ = CsrMatrix(pattern_);
    pattern_.clear();
    pattern_.shrink_to_fit();

    const auto& rp = template_.row_ptr();
    for (auto& em : maps_) {
        const std::size_t ng = em.gnodes.size();
        em.block_offset.resize(ng * ng);
        for (std::size_t i = 0; i < ng; ++i) {
            const int row = em.gnodes[i] * ncomp_;
            for (std::size_t j = 0; j < ng; ++j) {
                const int pos = template_.find(row, em.gnodes[j] * ncomp_);
                em.block_offset[i * ng + j] = pos - rp[row];
            }
        }
    }
    for (const auto& hc : mesh.constraints()) {
        for (int c = 0; c < ncomp_; ++c) hanging_dofs_.push_back(hc.node * ncomp_ + c);
    }
}

SparseSystem Assembler::make_system() const {
    SparseSystem s;
    s.matrix = template_;
    s.rhs.assign(num_dofs(), 0.0);
    s.dirichlet.assign(num_dofs(), 0);
    return s;
}

void Assembler::condense_and_scatter(const ElementMap& em, const double* ke, const double* fe, SparseSystem* sys,
                                     Vec& rhs) const {
    const int nc = mesh_->corners_per_element();
    const int nl = nc * ncomp_;
    const int ng = static_cast<int>(em.gnodes.size());
    const int ngl = ng * ncomp_;
    thread_local std::vector<double> kc, fc;
    const double* kp = ke;
    const double* fp = fe;
    if (!em.plain) {
        fc.assign(ngl, 0.0);
        for (int a = 0; a < nc; ++a) {
            for (const auto& [ia, wa] : em.corner[a]) {
                for (int c = 0; c < ncomp_; ++c) fc[ia * ncomp_ + c] += wa * fe[a * ncomp_ + c];
            }
        }
        fp = fc.data();
        if (ke) {
            kc.assign(static_cast<std::size_t>(ngl) * ngl, 0.0);
            for (int a = 0; a < nc; ++a) {
                for (const auto& [ia, wa] : em.corner[a]) {
                    for (int b = 0; b < nc; ++b) {
                        for (const auto& [ib, wb] : em.corner[b]) {
                            const double w = wa * wb;
                            for (int ci = 0; ci < ncomp_; ++ci) {
                                const double* src = ke + (a * ncomp_ + ci) * nl + b * ncomp_;
                                double* dst = kc.data() + (ia * ncomp_ + ci) * ngl + ib * ncomp_;
                                for (int cj = 0; cj < ncomp_; ++cj) dst[cj] += w * src[cj];
                            }
                        }
                    }
                }
            }
            kp = kc.data();
        }
    }
    // In the plain case gnodes[i] is corner i, so local and condensed layouts coincide.
    for (int i = 0; i < ng; ++i) {
        for (int c = 0; c < ncomp_; ++c) rhs[em.gnodes[i] * ncomp_ + c] += fp[i * ncomp_ + c];
    }
    if (!kp || !sys) return;
    auto& vals = sys->matrix.values();
    const auto& rp = sys->matrix.row_ptr();
    for (int i = 0; i < ng; ++i) {
        for (int ci = 0; ci < ncomp_; ++ci) {
            const int row = em.gnodes[i] * ncomp_ + ci;
            const int base = rp[row];
            const double* src = kp + (i * ncomp_ + ci) * ngl;
            for (int j = 0; j < ng; ++j) {
                double* dst = &vals[base + em.block_offset[i * ng + j]];
                for (int cj = 0; cj < ncomp_; ++cj) dst[cj] += src[j * ncomp_ + cj];
            }
        }
    }
}

template <class Fn>
void Assembler::run_elements(bool want_matrix, Fn&& scatter, const ElementKernel& kernel) const {
    const int nc = mesh_->corners_per_element();
    const int nl = nc * ncomp_;
    const std::size_t ne = mesh_->num_elements();
    const auto& ref = ReferenceElement::get(mesh_->dim());
    const std::size_t kstride = want_matrix ? static_cast<std::size_t>(nl) * nl : 0;

    auto compute = [&](std::size_t e, ElementQuad& quad, double& cached_h, double* ke, double* fe) {
        ElementContext ctx;
        ctx.element = e;
        ctx.geometry = element_geometry(*mesh_, e);
        if (ctx.geometry.h != cached_h) {
            quad.reinit(ref, ctx.geometry);
            cached_h = ctx.geometry.h;
        } else {
            for (int q = 0; q < quad.nq; ++q) quad.x[q] = ctx.geometry.map(ref.points[q]);
        }
        ctx.quad = &quad;
        ctx.nodes = mesh_->element_nodes(e);
        ctx.ncomp = ncomp_;
        if (ke) std::fill(ke, ke + kstride, 0.0);
        std::fill(fe, fe + nl, 0.0);
        kernel(ctx, ke, fe);
        for (int i = 0; i < nl; ++i) {
            if (!std::isfinite(fe[i])) throw SolverError("non-finite element vector in element " + std::to_string(e));
        }
        if (ke) {
            for (std::size_t i = 0; i < kstride; ++i) {
                if (!std::isfinite(ke[i])) throw SolverError("non-finite element matrix in element " + std::to_string(e));
            }
        }
    };

    if (threads_ <= 1 || ne < 64) {
        ElementQuad quad;
        double cached_h = -1.0;
        std::vector<double> ke(kstride), fe(nl);
        for (std::size_t e = 0; e < ne; ++e) {
            compute(e, quad, cached_h, want_matrix ? ke.data() : nullptr, fe.data());
            scatter(e, want_matrix ? ke.data() : nullptr, fe.data());
        }
        return;
    }

    // Parallel element evaluation in batches, scatter in Morton order.
    const std::size_t batch = 2048;
    std::vector<double> kbuf(batch * kstride), fbuf(batch * nl);
    for (std::size_t start = 0; start < ne; start += batch) {
        const std::size_t count = std::min(batch, ne - start);
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads_);
        for (int t = 0; t < threads_; ++t) {
            pool.emplace_back([&, t] {
                try {
                    ElementQuad quad;
                    double cached_h = -1.0;
                    for (std::size_t i = t; i < count; i += threads_) {
                        compute(start + i, quad, cached_h, want_matrix ? &kbuf[i * kstride] : nullptr, &fbuf[i * nl]);
                    }
                } catch (...) {
                    errors[t] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) th.join();
        for (auto& err : errors) {
            if (err) std::rethrow_exception(err);
        }
        for (std::size_t i = 0; i < count; ++i) {
            scatter(start + i, want_matrix ? &kbuf[i * kstride] : nullptr, &fbuf[i * nl]);
        }
    }
}

void Assembler::assemble(const ElementKernel& kernel, SparseSystem& sys) const {
    if (sys.matrix.nnz() != template_.nnz()) sys = make_system();
    sys.matrix.zero();
    std::fill(sys.rhs.begin(), sys.rhs.end(), 0.0);
    std::fill(sys.dirichlet.begin(), sys.dirichlet.end(), 0);
    run_elements(
        true, [&](std::size_t e, const double* ke, const double* fe) { condense_and_scatter(maps_[e], ke, fe, &sys, sys.rhs); },
        kernel);
    for (int d : hanging_dofs_) {
        sys.matrix.set_identity_row(d);
        sys.rhs[d] = 0.0;
    }
}

void Assembler::assemble_vector(const ElementKernel& kernel, Vec& rhs) const {
    rhs.assign(num_dofs(), 0.0);
    run_elements(
        false, [&](std::size_t e, const double*, const double* fe) { condense_and_scatter(maps_[e], nullptr, fe, nullptr, rhs); },
        kernel);
    for (int d : hanging_dofs_) rhs[d] = 0.0;
}

void apply_dirichlet(SparseSystem& sys, const std::map<int, double>& values) {
    for (const auto& [d, v] : values) {
        sys.matrix.set_identity_row(d);
        sys.rhs[d] = v;
        if (!sys.dirichlet.empty()) sys.dirichlet[d] = 1;
    }
}

void apply_constraints(const TreeMesh& mesh, int ncomp, Vec& u) {
    for (const auto& hc : mesh.constraints()) {
        for (int c = 0; c < ncomp; ++c) {
            double s = 0.0;
            for (const auto& [m, w] : hc.masters) s += w * u[m * ncomp + c];
            u[hc.node * ncomp + c] = s;
        }
    }
}

void interpolate(const TreeMesh& mesh, int ncomp, int comp, const std::function<double(const Point&)>& f, Vec& u) {
    if (u.size() != mesh.num_nodes() * ncomp) u.resize(mesh.num_nodes() * ncomp, 0.0);
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) u[n * ncomp + comp] = f(mesh.node(n));
    apply_constraints(mesh, ncomp, u);
}

double l2_error(const TreeMesh& mesh, const Vec& u, int ncomp, int comp,
                const std::function<double(const Point&)>& exact) {
    const auto& ref = ReferenceElement::get(mesh.dim(), 3);
    ElementQuad quad;
    const int nn = mesh.corners_per_element();
    double sum = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto geo = element_geometry(mesh, e);
        quad.reinit(ref, geo);
        const int* nodes = mesh.element_nodes(e);
        for (int q = 0; q < quad.nq; ++q) {
            double uh = 0.0;
            for (int a = 0; a < nn; ++a) uh += quad.n(q, a) * u[nodes[a] * ncomp + comp];
            const double d = uh - exact(quad.x[q]);
            sum += d * d * quad.jxw[q];
        }
    }
    return std::sqrt(sum);
}

PointValue evaluate(const TreeMesh& mesh, const Vec& u, int ncomp, int comp, const Point& x) {
    PointValue pv;
    const int e = mesh.locate(x);
    if (e < 0) return pv;
    const auto geo = element_geometry(mesh, e);
    Point xi = geo.inverse_map(x);
    // Periodic wrap may put the point one period away from the element.
    for (int k = 0; k < mesh.dim(); ++k) {
        if (mesh.grid().periodic[k]) {
            const double len = mesh.grid().extent(k);
            Point xx = x;
            xx[k] -= std::floor(xx[k] / len) * len;
            xi[k] = 2.0 * (xx[k] - geo.lo[k]) / geo.h - 1.0;
        }
        xi[k] = std::clamp(xi[k], -1.0, 1.0);
    }
    double vals[kMaxCorners];
    std::array<double, 3> gr[kMaxCorners];
    shape_eval(mesh.dim(), xi, vals, gr);
    const int* nodes = mesh.element_nodes(e);
    for (int a = 0; a < mesh.corners_per_element(); ++a) {
        const double ua = u[nodes[a] * ncomp + comp];
        pv.value += vals[a] * ua;
        for (int k = 0; k < mesh.dim(); ++k) pv.grad[k] += gr[a][k] * (2.0 / geo.h) * ua;
    }
    pv.found = true;
    return pv;
}

}  // namespace ekdns
