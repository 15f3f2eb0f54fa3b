#include "ekdns/physics.hpp"

#include <cmath>

namespace ekdns {

void NondimGroups::validate() const {
    if (!(Sc > 0.0)) throw ConfigError("Schmidt number must be positive");
    if (!(kappa >= 0.0)) throw ConfigError("coupling constant kappa must be non-negative");
    if (!(Lambda > 0.0)) throw ConfigError("Debye length ratio Lambda must be positive");
    if (species.empty()) throw ConfigError("at least one species is required");
    for (const auto& s : species) {
        if (!(s.D > 0.0)) throw ConfigError("species diffusivities must be positive");
    }
}

NondimResult nondimensionalize(const DimensionalInputs& in) {
    const std::size_t n = in.z.size();
    if (n == 0 || in.D.size() != n || in.c_initial.size() != n) {
        throw ConfigError("species lists (z, D, c_initial) must be non-empty and of equal length");
    }
    if (!(in.eta > 0 && in.rho > 0 && in.eps_r > 0 && in.T > 0 && in.L_ch > 0)) {
        throw ConfigError("dimensional inputs must be positive");
    }
    NondimResult r;
    double dsum = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        if (!(in.D[s] > 0)) throw ConfigError("species diffusivities must be positive");
        dsum += in.D[s];
        r.ionic_strength += 0.5 * in.z[s] * in.z[s] * in.c_initial[s];
    }
    if (!(r.ionic_strength > 0.0)) throw ConfigError("ionic strength is zero; the Debye length is undefined");
    r.mean_diffusivity = dsum / static_cast<double>(n);
    const double eps = in.eps_r * kVacuumPermittivity;
    const double vt = kGasConstant * in.T / kFaraday;
    r.debye_length = std::sqrt(0.5 * eps * kGasConstant * in.T / (kFaraday * kFaraday * r.ionic_strength));
    r.groups.Sc = in.eta / (in.rho * r.mean_diffusivity);
    r.groups.kappa = eps / (in.eta * r.mean_diffusivity) * vt * vt;
    r.groups.Lambda = r.debye_length / in.L_ch;
    r.groups.species.clear();
    for (std::size_t s = 0; s < n; ++s) r.groups.species.push_back({in.z[s], in.D[s] / r.mean_diffusivity});
    return r;
}

TauSet compute_taus(int dim, double g, const std::array<double, 3>& v, double dt, const NondimGroups& groups) {
    TauSet t;
    const double time_term = dt > 0.0 ? 4.0 / (dt * dt) : 0.0;
    double vgv = 0.0;
    for (int k = 0; k < dim; ++k) vgv += v[k] * g * v[k];
    const double gg = dim * g * g;
    t.tau_m = 1.0 / std::sqrt(time_term + vgv + kCI * groups.Sc * groups.Sc * gg);
    t.tau_sol = 1.0 / (dim * g * t.tau_m);
    t.tau_c.resize(groups.species.size());
    for (std::size_t s = 0; s < groups.species.size(); ++s) {
        const double d = groups.species[s].D;
        t.tau_c[s] = 1.0 / std::sqrt(time_term + vgv + kCI * d * d * gg);
    }
    return t;
}

TauSet compute_taus(const ElementGeometry& geo, const std::array<double, 3>& v, double dt, const NondimGroups& groups) {
    return compute_taus(geo.dim, geo.g_diag(), v, dt, groups);
}

namespace {

double dotd(const std::array<double, 3>& a, const std::array<double, 3>& b, int dim) {
    double s = 0.0;
    for (int k = 0; k < dim; ++k) s += a[k] * b[k];
    return s;
}

/// Value of component `comp` of a node-interleaved vector at quadrature point q.
double at_qp(const ElementQuad& q, int p, const int* nodes, const Vec& u, int ncomp, int comp) {
    double s = 0.0;
    for (int a = 0; a < q.nn; ++a) s += q.n(p, a) * u[nodes[a] * ncomp + comp];
    return s;
}

std::array<double, 3> grad_qp(const ElementQuad& q, int p, const int* nodes, const Vec& u, int ncomp, int comp) {
    std::array<double, 3> g{0, 0, 0};
    for (int a = 0; a < q.nn; ++a) {
        const double ua = u[nodes[a] * ncomp + comp];
        for (int k = 0; k < q.dim; ++k) g[k] += q.dn(p, a)[k] * ua;
    }
    return g;
}

}  // namespace

ElementKernel ns_kernel(const NsInputs& in) {
    if (!in.groups || !in.vtilde || !in.ns_k) throw SolverError("incomplete NS kernel inputs");
    return [in](const ElementContext& ctx, double* ke, double* fe) {
        const auto& q = *ctx.quad;
        const auto& grp = *in.groups;
        const int dim = q.dim;
        const int nc = dim + 1;
        const int nl = q.nn * nc;
        const int npnp = pnp_components(grp.num_species());
        const double inv_sc = 1.0 / grp.Sc;
        const double b0dt = in.bdf.b0 / in.dt;
        const double force_scale = grp.kappa / (2.0 * grp.Lambda * grp.Lambda);
        const double g = ctx.geometry.g_diag();
        const int* nodes = ctx.nodes;

        for (int p = 0; p < q.nq; ++p) {
            const double w = q.jxw[p];
            std::array<double, 3> vt{0, 0, 0}, hist{0, 0, 0}, fel{0, 0, 0}, fsrc{0, 0, 0};
            for (int i = 0; i < dim; ++i) {
                vt[i] = at_qp(q, p, nodes, *in.vtilde, nc, i);
                hist[i] = in.bdf.b1 * at_qp(q, p, nodes, *in.ns_k, nc, i);
                if (in.ns_km1 && in.bdf.b2 != 0.0) hist[i] += in.bdf.b2 * at_qp(q, p, nodes, *in.ns_km1, nc, i);
                hist[i] /= in.dt;
            }
            if (in.pnp) {
                double rho = 0.0;
                for (int s = 0; s < grp.num_species(); ++s) {
                    rho += grp.species[s].z * at_qp(q, p, nodes, *in.pnp, npnp, 1 + s);
                }
                const auto gphi = grad_qp(q, p, nodes, *in.pnp, npnp, 0);
                for (int i = 0; i < dim; ++i) fel[i] = force_scale * rho * gphi[i];
            }
            if (in.forcing) fsrc = in.forcing(q.x[p], in.time);

            const auto tau = compute_taus(dim, g, vt, in.dt, grp);
            const double tm = tau.tau_m;
            const double ts = tau.tau_sol;
            // Known part of the momentum residual in acceleration form.
            std::array<double, 3> rk{0, 0, 0};
            for (int i = 0; i < dim; ++i) rk[i] = hist[i] + grp.Sc * (fel[i] - fsrc[i]);

            for (int a = 0; a < q.nn; ++a) {
                const double na = q.n(p, a);
                const auto& dna = q.dn(p, a);
                const double adv_a = dotd(vt, dna, dim);
                for (int i = 0; i < dim; ++i) {
                    fe[a * nc + i] -= (inv_sc * na * hist[i] + inv_sc * adv_a * tm * rk[i] + na * (fel[i] - fsrc[i])) * w;
                }
                fe[a * nc + dim] += tm * dotd(dna, rk, dim) * w;
                if (!ke) continue;
                for (int b = 0; b < q.nn; ++b) {
                    const double nb = q.n(p, b);
                    const auto& dnb = q.dn(p, b);
                    const double lb = b0dt * nb + dotd(vt, dnb, dim);
                    const double lap = dotd(dna, dnb, dim);
                    const double vel = (inv_sc * (na * lb + adv_a * tm * lb) + lap) * w;
                    for (int i = 0; i < dim; ++i) {
                        double* row = ke + (a * nc + i) * nl + b * nc;
                        row[i] += vel;
                        for (int j = 0; j < dim; ++j) row[j] += inv_sc * dna[i] * ts * dnb[j] * w;
                        row[dim] += (na * dnb[i] + adv_a * tm * dnb[i]) * w;
                    }
                    double* crow = ke + (a * nc + dim) * nl + b * nc;
                    for (int j = 0; j < dim; ++j) crow[j] -= (na * dnb[j] + dna[j] * tm * lb) * w;
                    crow[dim] -= tm * grp.Sc * lap * w;
                }
            }
        }
    };
}

namespace {

void pnp_element(const PnpInputs& in, const Vec& U, const ElementContext& ctx, double* ke, double* fe) {
    const auto& q = *ctx.quad;
    const auto& grp = *in.groups;
    const int dim = q.dim;
    const int ns = grp.num_species();
    const int nc = 1 + ns;
    const int nl = q.nn * nc;
    const int nvc = dim + 1;
    const double two_l2 = 2.0 * grp.Lambda * grp.Lambda;
    const double b0dt = in.steady ? 0.0 : in.bdf.b0 / in.dt;
    const double g = ctx.geometry.g_diag();
    const int* nodes = ctx.nodes;

    std::vector<double> c(ns), hist(ns), fc(ns), R(ns);
    std::vector<std::array<double, 3>> gc(ns);

    for (int p = 0; p < q.nq; ++p) {
        const double w = q.jxw[p];
        std::array<double, 3> vt{0, 0, 0};
        if (in.vtilde) {
            for (int k = 0; k < dim; ++k) vt[k] = at_qp(q, p, nodes, *in.vtilde, nvc, k);
        }
        const auto gphi = grad_qp(q, p, nodes, U, nc, 0);
        double fphi = in.poisson_forcing ? in.poisson_forcing(q.x[p], in.time) : 0.0;
        const auto tau = compute_taus(dim, g, vt, in.steady ? 0.0 : in.dt, grp);
        double rho = 0.0, zt_r = 0.0;
        for (int s = 0; s < ns; ++s) {
            const double z = grp.species[s].z;
            const double D = grp.species[s].D;
            c[s] = at_qp(q, p, nodes, U, nc, 1 + s);
            gc[s] = grad_qp(q, p, nodes, U, nc, 1 + s);
            hist[s] = 0.0;
            if (!in.steady) {
                hist[s] = in.bdf.b1 * at_qp(q, p, nodes, *in.pnp_k, nc, 1 + s);
                if (in.pnp_km1 && in.bdf.b2 != 0.0) hist[s] += in.bdf.b2 * at_qp(q, p, nodes, *in.pnp_km1, nc, 1 + s);
                hist[s] /= in.dt;
            }
            fc[s] = (s < static_cast<int>(in.species_forcing.size()) && in.species_forcing[s])
                        ? in.species_forcing[s](q.x[p], in.time)
                        : 0.0;
            R[s] = b0dt * c[s] + hist[s] + dotd(vt, gc[s], dim) - D * z * dotd(gc[s], gphi, dim) - fc[s];
            rho += z * c[s];
            zt_r += z * tau.tau_c[s] * R[s];
        }

        for (int a = 0; a < q.nn; ++a) {
            const double na = q.n(p, a);
            const auto& dna = q.dn(p, a);
            const double adv_a = dotd(vt, dna, dim);
            const double dna_gphi = dotd(dna, gphi, dim);
            fe[a * nc] += (two_l2 * dna_gphi - na * rho + na * zt_r - na * fphi) * w;
            for (int s = 0; s < ns; ++s) {
                const double z = grp.species[s].z;
                const double D = grp.species[s].D;
                const double t = tau.tau_c[s];
                fe[a * nc + 1 + s] += (na * (b0dt * c[s] + hist[s]) + na * dotd(vt, gc[s], dim) + adv_a * t * R[s] +
                                       D * z * c[s] * dna_gphi - D * z * t * R[s] * dna_gphi +
                                       D * dotd(dna, gc[s], dim) - na * fc[s]) *
                                      w;
            }
            if (!ke) continue;
            for (int b = 0; b < q.nn; ++b) {
                const double nb = q.n(p, b);
                const auto& dnb = q.dn(p, b);
                const double lap = dotd(dna, dnb, dim);
                const double adv_b = dotd(vt, dnb, dim);
                const double dnb_gphi = dotd(dnb, gphi, dim);
                double* prow = ke + (a * nc) * nl + b * nc;
                prow[0] += two_l2 * lap * w;
                for (int s = 0; s < ns; ++s) {
                    const double z = grp.species[s].z;
                    const double D = grp.species[s].D;
                    const double t = tau.tau_c[s];
                    const double dR_dc = b0dt * nb + adv_b - D * z * dnb_gphi;
                    const double dR_dphi = -D * z * dotd(gc[s], dnb, dim);
                    prow[0] += na * z * t * dR_dphi * w;
                    prow[1 + s] += (-na * z * nb + na * z * t * dR_dc) * w;

                    double* srow = ke + (a * nc + 1 + s) * nl + b * nc;
                    srow[1 + s] += (na * b0dt * nb + na * adv_b + adv_a * t * dR_dc + D * z * nb * dna_gphi -
                                    D * z * t * dR_dc * dna_gphi + D * lap) *
                                   w;
                    srow[0] += (adv_a * t * dR_dphi + D * z * c[s] * lap -
                                D * z * t * (dR_dphi * dna_gphi + R[s] * lap)) *
                               w;
                }
            }
        }
    }
}

}  // namespace

ElementKernel pnp_kernel(const PnpInputs& in, const Vec& U) {
    if (!in.groups || (!in.steady && !in.pnp_k)) throw SolverError("incomplete PNP kernel inputs");
    return [in, &U](const ElementContext& ctx, double* ke, double* fe) { pnp_element(in, U, ctx, ke, fe); };
}

ElementKernel pnp_residual(const PnpInputs& in, const Vec& U) {
    if (!in.groups || (!in.steady && !in.pnp_k)) throw SolverError("incomplete PNP kernel inputs");
    return [in, &U](const ElementContext& ctx, double*, double* fe) { pnp_element(in, U, ctx, nullptr, fe); };
}

BoundaryFlux boundary_flux(const TreeMesh& mesh, const Vec& pnp, const NondimGroups& groups, std::uint32_t tag) {
    int axis = -1;
    bool upper = false;
    switch (tag) {
        case kLeft: axis = 0; break;
        case kRight: axis = 0; upper = true; break;
        case kBottom: axis = 1; break;
        case kTop: axis = 1; upper = true; break;
        case kBack: axis = 2; break;
        case kFront: axis = 2; upper = true; break;
        default: throw MeshError("boundary flux needs a box face tag, got '" + boundary_tag_name(tag) + "'");
    }
    const int dim = mesh.dim();
    if (axis >= dim) throw MeshError("boundary tag '" + boundary_tag_name(tag) + "' does not exist in 2-D");
    if (mesh.grid().periodic[axis]) throw MeshError("boundary tag '" + boundary_tag_name(tag) + "' is periodic");
    const int ns = groups.num_species();
    const int nc = 1 + ns;
    const double extent = mesh.grid().extent(axis);
    double length = 1.0;
    for (int k = 0; k < dim; ++k) {
        if (k != axis) length *= mesh.grid().extent(k);
    }
    const auto rule = gauss_legendre(2);
    BoundaryFlux out;
    out.species.assign(ns, 0.0);
    const double normal = upper ? 1.0 : -1.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        const auto box = mesh.element_box(e);
        const double face = upper ? box.hi[axis] : box.lo[axis];
        if (std::abs(face - (upper ? extent : 0.0)) > 1e-12 * std::max(1.0, extent)) continue;
        const auto geo = element_geometry(mesh, e);
        const int* nodes = mesh.element_nodes(e);
        const int nfp = dim == 2 ? 2 : 4;
        for (int fp = 0; fp < nfp; ++fp) {
            Point xi{0, 0, 0};
            double w = 1.0;
            int rem = fp;
            for (int k = 0; k < dim; ++k) {
                if (k == axis) {
                    xi[k] = upper ? 1.0 : -1.0;
                    continue;
                }
                xi[k] = rule[rem % 2].first;
                w *= rule[rem % 2].second * 0.5 * geo.h;
                rem /= 2;
            }
            double vals[kMaxCorners];
            std::array<double, 3> gr[kMaxCorners];
            shape_eval(dim, xi, vals, gr);
            const double s = 2.0 / geo.h;
            double dphi = 0.0;
            for (int a = 0; a < (1 << dim); ++a) dphi += gr[a][axis] * s * pnp[nodes[a] * nc];
            for (int sp = 0; sp < ns; ++sp) {
                double cv = 0.0, dc = 0.0;
                for (int a = 0; a < (1 << dim); ++a) {
                    const double ca = pnp[nodes[a] * nc + 1 + sp];
                    cv += vals[a] * ca;
                    dc += gr[a][axis] * s * ca;
                }
                const auto& spc = groups.species[sp];
                out.species[sp] += -normal * spc.D * (dc + spc.z * cv * dphi) * w;
            }
        }
    }
    for (auto& j : out.species) j /= length;
    out.net = ns >= 2 ? out.species[0] - out.species[1] : out.species[0];
    return out;
}

BoundaryFlux boundary_flux(const TreeMesh& mesh, const Vec& pnp, const NondimGroups& groups, const std::string& tag) {
    return boundary_flux(mesh, pnp, groups, boundary_tag_from_name(tag));
}

double consistent_flux(const TreeMesh& mesh, const Vec& residual, int ncomp, int comp, std::uint32_t tag) {
    double s = 0.0;
    for (std::size_t n = 0; n < mesh.num_nodes(); ++n) {
        if (mesh.boundary_tags(n) & tag) s += residual[n * ncomp + comp];
    }
    double length = 1.0;
    const int axis = tag == kLeft || tag == kRight ? 0 : (tag == kBottom || tag == kTop ? 1 : 2);
    for (int k = 0; k < mesh.dim(); ++k) {
        if (k != axis) length *= mesh.grid().extent(k);
    }
    return s / length;
}

double divergence_residual(const TreeMesh& mesh, const Vec& ns) {
    const auto& ref = ReferenceElement::get(mesh.dim());
    const int nc = mesh.dim() + 1;
    Vec acc(mesh.num_nodes(), 0.0);
    ElementQuad q;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        q.reinit(ref, element_geometry(mesh, e));
        const int* nodes = mesh.element_nodes(e);
        for (int p = 0; p < q.nq; ++p) {
            double div = 0.0;
            for (int k = 0; k < q.dim; ++k) div += grad_qp(q, p, nodes, ns, nc, k)[k];
            for (int a = 0; a < q.nn; ++a) acc[nodes[a]] += q.n(p, a) * div * q.jxw[p];
        }
    }
    for (const auto& hc : mesh.constraints()) {
        for (const auto& [m, w] : hc.masters) acc[m] += w * acc[hc.node];
        acc[hc.node] = 0.0;
    }
    return norm2(acc);
}

double integrate(const TreeMesh& mesh, const Vec& u, int ncomp, int comp) {
    const auto& ref = ReferenceElement::get(mesh.dim());
    ElementQuad q;
    double s = 0.0;
    for (std::size_t e = 0; e < mesh.num_elements(); ++e) {
        q.reinit(ref, element_geometry(mesh, e));
        const int* nodes = mesh.element_nodes(e);
        for (int p = 0; p < q.nq; ++p) s += at_qp(q, p, nodes, u, ncomp, comp) * q.jxw[p];
    }
    return s;
}

Vec charge_density(const Vec& pnp, const NondimGroups& groups) {
    const int nc = 1 + groups.num_species();
    const std::size_t nn = pnp.size() / nc;
    Vec rho(nn, 0.0);
    for (std::size_t n = 0; n < nn; ++n) {
        for (int s = 0; s < groups.num_species(); ++s) rho[n] += groups.species[s].z * pnp[n * nc + 1 + s];
    }
    return rho;
}

}  // namespace ekdns
