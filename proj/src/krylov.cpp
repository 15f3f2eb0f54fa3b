#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "ekdns/linalg.hpp"

namespace ekdns {

void SolverConfig::validate() const {
    if (!(atol > 0.0) || !(rtol > 0.0)) throw SolverError("solver tolerances must be positive");
    if (max_iters < 1) throw SolverError("max_iters must be at least 1");
    if (method == KrylovMethod::Gmres && restart < 1) throw SolverError("GMRES restart must be at least 1");
    if (preconditioner == PreconditionerKind::BlockJacobi && block_size < 1) {
        throw SolverError("block-Jacobi block size must be at least 1");
    }
}

std::string to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Converged: return "converged";
        case SolveStatus::MaxIterations: return "max-iterations";
        case SolveStatus::Breakdown: return "breakdown";
        case SolveStatus::Diverged: return "diverged";
    }
    return "unknown";
}

namespace {

class Preconditioner {
public:
    virtual ~Preconditioner() = default;
    virtual void apply(std::span<const double> in, std::span<double> out) const = 0;
};

class IdentityPc final : public Preconditioner {
public:
    void apply(std::span<const double> in, std::span<double> out) const override {
        std::copy(in.begin(), in.end(), out.begin());
    }
};

class JacobiPc final : public Preconditioner {
public:
    explicit JacobiPc(const CsrMatrix& a) : inv_(a.rows()) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const int d = a.diag_pos(static_cast<int>(r));
            const double v = d >= 0 ? a.values()[d] : 0.0;
            inv_[r] = v != 0.0 ? 1.0 / v : 1.0;
        }
    }
    void apply(std::span<const double> in, std::span<double> out) const override {
        for (std::size_t i = 0; i < inv_.size(); ++i) out[i] = inv_[i] * in[i];
    }

private:
    Vec inv_;
};

/// Dense inverses of the diagonal blocks; a trailing partial block is allowed.
class BlockJacobiPc final : public Preconditioner {
public:
    BlockJacobiPc(const CsrMatrix& a, int bs) : bs_(bs), n_(static_cast<int>(a.rows())) {
        const int nb = (n_ + bs_ - 1) / bs_;
        inv_.assign(static_cast<std::size_t>(nb) * bs_ * bs_, 0.0);
        Vec blk(static_cast<std::size_t>(bs_) * bs_);
        for (int b = 0; b < nb; ++b) {
            const int r0 = b * bs_;
            const int m = std::min(bs_, n_ - r0);
            std::fill(blk.begin(), blk.end(), 0.0);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < m; ++j) blk[i * m + j] = a.at(r0 + i, r0 + j);
            }
            invert(blk, m, &inv_[static_cast<std::size_t>(b) * bs_ * bs_]);
        }
    }
    void apply(std::span<const double> in, std::span<double> out) const override {
        const int nb = (n_ + bs_ - 1) / bs_;
        for (int b = 0; b < nb; ++b) {
            const int r0 = b * bs_;
            const int m = std::min(bs_, n_ - r0);
            const double* inv = &inv_[static_cast<std::size_t>(b) * bs_ * bs_];
            for (int i = 0; i < m; ++i) {
                double s = 0.0;
                for (int j = 0; j < m; ++j) s += inv[i * m + j] * in[r0 + j];
                out[r0 + i] = s;
            }
        }
    }

private:
    static void invert(Vec a, int m, double* out) {
        // Gauss-Jordan with partial pivoting; singular blocks fall back to identity.
        std::vector<double> inv(static_cast<std::size_t>(m) * m, 0.0);
        for (int i = 0; i < m; ++i) inv[i * m + i] = 1.0;
        for (int c = 0; c < m; ++c) {
            int piv = c;
            for (int r = c + 1; r < m; ++r) {
                if (std::abs(a[r * m + c]) > std::abs(a[piv * m + c])) piv = r;
            }
            if (std::abs(a[piv * m + c]) < 1e-300) {
                for (int i = 0; i < m * m; ++i) out[i] = (i % (m + 1) == 0) ? 1.0 : 0.0;
                return;
            }
            if (piv != c) {
                for (int j = 0; j < m; ++j) {
                    std::swap(a[c * m + j], a[piv * m + j]);
                    std::swap(inv[c * m + j], inv[piv * m + j]);
                }
            }
            const double d = a[c * m + c];
            for (int j = 0; j < m; ++j) {
                a[c * m + j] /= d;
                inv[c * m + j] /= d;
            }
            for (int r = 0; r < m; ++r) {
                if (r == c) continue;
                const double f = a[r * m + c];
                if (f == 0.0) continue;
                for (int j = 0; j < m; ++j) {
                    a[r * m + j] -= f * a[c * m + j];
                    inv[r * m + j] -= f * inv[c * m + j];
                }
            }
        }
        std::copy(inv.begin(), inv.end(), out);
    }

    int bs_;
    int n_;
    Vec inv_;
};

/// Incomplete LU with the sparsity pattern of A.
class Ilu0Pc final : public Preconditioner {
public:
    explicit Ilu0Pc(const CsrMatrix& a) : rp_(a.row_ptr()), ci_(a.cols()), lu_(a.values()), diag_(a.rows()) {
        const int n = static_cast<int>(a.rows());
        std::vector<int> marker(n, -1);
        for (int i = 0; i < n; ++i) {
            diag_[i] = a.diag_pos(i);
            if (diag_[i] < 0) throw SolverError("ILU(0) needs a full diagonal");
        }
        for (int i = 0; i < n; ++i) {
            for (int k = rp_[i]; k < rp_[i + 1]; ++k) marker[ci_[k]] = k;
            for (int k = rp_[i]; k < rp_[i + 1] && ci_[k] < i; ++k) {
                const int col = ci_[k];
                double piv = lu_[diag_[col]];
                if (piv == 0.0) piv = 1e-300;
                const double f = lu_[k] / piv;
                lu_[k] = f;
                if (f == 0.0) continue;
                for (int kk = diag_[col] + 1; kk < rp_[col + 1]; ++kk) {
                    const int pos = marker[ci_[kk]];
                    if (pos >= 0) lu_[pos] -= f * lu_[kk];
                }
            }
            for (int k = rp_[i]; k < rp_[i + 1]; ++k) marker[ci_[k]] = -1;
            if (lu_[diag_[i]] == 0.0) lu_[diag_[i]] = 1e-300;
        }
    }

    void apply(std::span<const double> in, std::span<double> out) const override {
        const int n = static_cast<int>(diag_.size());
        for (int i = 0; i < n; ++i) {
            double s = in[i];
            for (int k = rp_[i]; k < diag_[i]; ++k) s -= lu_[k] * out[ci_[k]];
            out[i] = s;
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = out[i];
            for (int k = diag_[i] + 1; k < rp_[i + 1]; ++k) s -= lu_[k] * out[ci_[k]];
            out[i] = s / lu_[diag_[i]];
        }
    }

private:
    const std::vector<int>& rp_;
    const std::vector<int>& ci_;
    Vec lu_;
    std::vector<int> diag_;
};

std::unique_ptr<Preconditioner> make_pc(const CsrMatrix& a, const SolverConfig& c) {
    switch (c.preconditioner) {
        case PreconditionerKind::None: return std::make_unique<IdentityPc>();
        case PreconditionerKind::Jacobi: return std::make_unique<JacobiPc>(a);
        case PreconditionerKind::BlockJacobi: return std::make_unique<BlockJacobiPc>(a, c.block_size);
        case PreconditionerKind::Ilu0: return std::make_unique<Ilu0Pc>(a);
    }
    return std::make_unique<IdentityPc>();
}

double true_residual(const CsrMatrix& a, std::span<const double> b, const Vec& x, Vec& r) {
    a.multiply(x, r);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = b[i] - r[i];
    return norm2(r);
}

// The iterated residual of this variant is the unpreconditioned one, so the
// stopping test is made directly on ||b - A x||.
SolveResult bicgstab(const CsrMatrix& a, std::span<const double> b, Vec& x, const SolverConfig& cfg,
                     const Preconditioner& pc) {
    const std::size_t n = b.size();
    Vec r(n), rhat(n), p(n, 0.0), v(n, 0.0), phat(n), s(n), shat(n), t(n);
    SolveResult res;
    res.initial_residual = true_residual(a, b, x, r);
    const double tol = std::max(cfg.atol, cfg.rtol * res.initial_residual);
    double rnorm = res.initial_residual;
    if (!std::isfinite(rnorm)) {
        res.status = SolveStatus::Diverged;
        res.final_residual = rnorm;
        return res;
    }
    if (rnorm <= tol) {
        res.status = SolveStatus::Converged;
        res.final_residual = rnorm;
        return res;
    }
    Vec best = x;
    double best_norm = rnorm;

    while (res.iterations < cfg.max_iters) {
        // (Re)start the recurrence from the true residual.
        rhat = r;
        double rho = 1.0, alpha = 1.0, omega = 1.0;
        std::fill(p.begin(), p.end(), 0.0);
        std::fill(v.begin(), v.end(), 0.0);
        bool restart = false;
        while (res.iterations < cfg.max_iters) {
            ++res.iterations;
            const double rho_new = dot(rhat, r);
            if (std::abs(rho_new) < 1e-300 || !std::isfinite(rho_new)) {
                res.status = SolveStatus::Breakdown;
                x = best;
                res.final_residual = true_residual(a, b, x, r);
                return res;
            }
            const double beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
            pc.apply(p, phat);
            a.multiply(phat, v);
            const double rv = dot(rhat, v);
            if (std::abs(rv) < 1e-300) {
                res.status = SolveStatus::Breakdown;
                x = best;
                res.final_residual = true_residual(a, b, x, r);
                return res;
            }
            alpha = rho / rv;
            for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
            const double snorm = norm2(s);
            if (snorm <= tol) {
                res.history.push_back(snorm);
                for (std::size_t i = 0; i < n; ++i) x[i] += alpha * phat[i];
                rnorm = snorm;
                restart = true;
                break;
            }
            pc.apply(s, shat);
            a.multiply(shat, t);
            const double tt = dot(t, t);
            omega = tt > 0.0 ? dot(t, s) / tt : 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                x[i] += alpha * phat[i] + omega * shat[i];
                r[i] = s[i] - omega * t[i];
            }
            rnorm = norm2(r);
            res.history.push_back(rnorm);
            if (!std::isfinite(rnorm)) {
                res.status = SolveStatus::Diverged;
                x = best;
                res.final_residual = true_residual(a, b, x, r);
                return res;
            }
            if (rnorm < best_norm) {
                best_norm = rnorm;
                best = x;
            }
            if (rnorm <= tol) {
                restart = true;
                break;
            }
            if (omega == 0.0) {
                res.status = SolveStatus::Breakdown;
                x = best;
                res.final_residual = true_residual(a, b, x, r);
                return res;
            }
        }
        if (!restart) break;
        // Confirm against the true residual; recurrence drift triggers a restart.
        rnorm = true_residual(a, b, x, r);
        if (rnorm <= tol) {
            res.status = SolveStatus::Converged;
            res.final_residual = rnorm;
            return res;
        }
        if (rnorm < best_norm) {
            best_norm = rnorm;
            best = x;
        }
    }
    res.final_residual = true_residual(a, b, x, r);
    if (res.final_residual > best_norm) {
        x = best;
        res.final_residual = true_residual(a, b, x, r);
    }
    res.status = res.final_residual <= tol ? SolveStatus::Converged : SolveStatus::MaxIterations;
    return res;
}

// Restarted GMRES with right preconditioning: x = x0 + M^{-1} V y.
SolveResult gmres(const CsrMatrix& a, std::span<const double> b, Vec& x, const SolverConfig& cfg,
                  const Preconditioner& pc) {
    const std::size_t n = b.size();
    const int m = cfg.restart;
    Vec r(n), w(n), z(n);
    std::vector<Vec> basis(m + 1, Vec(n));
    std::vector<double> h(static_cast<std::size_t>(m + 1) * m, 0.0);
    std::vector<double> cs(m), sn(m), g(m + 1), y(m);
    auto H = [&](int i, int j) -> double& { return h[static_cast<std::size_t>(i) * m + j]; };

    SolveResult res;
    res.initial_residual = true_residual(a, b, x, r);
    const double tol = std::max(cfg.atol, cfg.rtol * res.initial_residual);
    double beta = res.initial_residual;
    if (!std::isfinite(beta)) {
        res.status = SolveStatus::Diverged;
        res.final_residual = beta;
        return res;
    }
    while (beta > tol && res.iterations < cfg.max_iters) {
        for (std::size_t i = 0; i < n; ++i) basis[0][i] = r[i] / beta;
        std::fill(g.begin(), g.end(), 0.0);
        g[0] = beta;
        int k = 0;
        for (; k < m && res.iterations < cfg.max_iters; ++k) {
            ++res.iterations;
            pc.apply(basis[k], z);
            a.multiply(z, w);
            for (int i = 0; i <= k; ++i) {
                H(i, k) = dot(w, basis[i]);
                for (std::size_t j = 0; j < n; ++j) w[j] -= H(i, k) * basis[i][j];
            }
            H(k + 1, k) = norm2(w);
            if (H(k + 1, k) > 0.0) {
                for (std::size_t j = 0; j < n; ++j) basis[k + 1][j] = w[j] / H(k + 1, k);
            }
            for (int i = 0; i < k; ++i) {
                const double t = cs[i] * H(i, k) + sn[i] * H(i + 1, k);
                H(i + 1, k) = -sn[i] * H(i, k) + cs[i] * H(i + 1, k);
                H(i, k) = t;
            }
            const double denom = std::hypot(H(k, k), H(k + 1, k));
            if (denom == 0.0) {
                res.status = SolveStatus::Breakdown;
                break;
            }
            cs[k] = H(k, k) / denom;
            sn[k] = H(k + 1, k) / denom;
            H(k, k) = denom;
            H(k + 1, k) = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            res.history.push_back(std::abs(g[k + 1]));
            if (std::abs(g[k + 1]) <= tol) {
                ++k;
                break;
            }
        }
        for (int i = k - 1; i >= 0; --i) {
            double s = g[i];
            for (int j = i + 1; j < k; ++j) s -= H(i, j) * y[j];
            y[i] = s / H(i, i);
        }
        std::fill(w.begin(), w.end(), 0.0);
        for (int i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < n; ++j) w[j] += y[i] * basis[i][j];
        }
        pc.apply(w, z);
        for (std::size_t j = 0; j < n; ++j) x[j] += z[j];
        beta = true_residual(a, b, x, r);
        if (!std::isfinite(beta)) {
            res.status = SolveStatus::Diverged;
            res.final_residual = beta;
            return res;
        }
        if (res.status == SolveStatus::Breakdown) break;
    }
    res.final_residual = beta;
    if (beta <= tol) {
        res.status = SolveStatus::Converged;
    } else if (res.status != SolveStatus::Breakdown) {
        res.status = SolveStatus::MaxIterations;
    }
    return res;
}

}  // namespace

SolveResult solve(const CsrMatrix& a, std::span<const double> b, Vec& x, const SolverConfig& config) {
    config.validate();
    if (b.size() != a.rows() || x.size() != a.rows()) throw SolverError("system size mismatch");
    const auto pc = make_pc(a, config);
    if (config.method == KrylovMethod::Gmres) return gmres(a, b, x, config, *pc);
    return bicgstab(a, b, x, config, *pc);
}

SolveResult solve(const SparseSystem& sys, const SolverConfig& config, Vec& x) {
    for (std::size_t i = 0; i < sys.dirichlet.size() && i < x.size(); ++i) {
        if (sys.dirichlet[i]) x[i] = sys.rhs[i];
    }
    auto res = solve(sys.matrix, sys.rhs, x, config);
    // Identity rows are satisfied exactly regardless of the Krylov tolerance.
    for (std::size_t i = 0; i < sys.dirichlet.size(); ++i) {
        if (sys.dirichlet[i]) x[i] = sys.rhs[i];
    }
    return res;
}

}  // namespace ekdns
