/// @file linalg.hpp
/// @brief Compressed sparse row storage and preconditioned Krylov solvers.
#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ekdns {

using Vec = std::vector<double>;

class SolverError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Square CSR matrix with a fixed sparsity pattern. Column indices within a row
/// are sorted, which `add` relies on.
class CsrMatrix {
public:
    CsrMatrix() = default;
    /// Build from per-row sorted, unique column lists.
    explicit CsrMatrix(const std::vector<std::vector<int>>& pattern);

    std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
    std::size_t nnz() const { return cols_.size(); }

    const std::vector<int>& row_ptr() const { return row_ptr_; }
    const std::vector<int>& cols() const { return cols_; }
    std::vector<double>& values() { return vals_; }
    const std::vector<double>& values() const { return vals_; }

    /// Position of (row, col) in the value array, or -1 if not in the pattern.
    int find(int row, int col) const;
    void add(int row, int col, double v);
    double at(int row, int col) const;
    void zero() { std::fill(vals_.begin(), vals_.end(), 0.0); }
    /// Replace row by the identity row.
    void set_identity_row(int row);
    int diag_pos(int row) const { return diag_[row]; }

    void multiply(std::span<const double> x, std::span<double> y) const;
    double max_abs() const;

private:
    std::vector<int> row_ptr_;
    std::vector<int> cols_;
    std::vector<int> diag_;
    std::vector<double> vals_;
};

struct SparseSystem {
    CsrMatrix matrix;
    Vec rhs;
    /// Rows replaced by Dirichlet identity rows.
    std::vector<char> dirichlet;
};

enum class KrylovMethod { BiCGStab, Gmres };
enum class PreconditionerKind { None, Jacobi, BlockJacobi, Ilu0 };

struct SolverConfig {
    KrylovMethod method = KrylovMethod::BiCGStab;
    int restart = 50;
    double atol = 1e-10;
    double rtol = 1e-8;
    int max_iters = 2000;
    PreconditionerKind preconditioner = PreconditionerKind::Ilu0;
    int block_size = 1;

    void validate() const;
};

enum class SolveStatus { Converged, MaxIterations, Breakdown, Diverged };
std::string to_string(SolveStatus s);

struct SolveResult {
    int iterations = 0;
    double initial_residual = 0.0;
    double final_residual = 0.0;
    SolveStatus status = SolveStatus::MaxIterations;
    /// Residual norm after each iteration (recurrence estimate).
    std::vector<double> history;

    bool converged() const { return status == SolveStatus::Converged; }
};

/// Solve A x = b starting from x (overwritten). Stops when
/// ||b - A x|| <= max(atol, rtol * ||b - A x0||); the reported residual is the
/// recomputed true residual.
SolveResult solve(const CsrMatrix& a, std::span<const double> b, Vec& x, const SolverConfig& config);
SolveResult solve(const SparseSystem& sys, const SolverConfig& config, Vec& x);

/// Matrix Market coordinate dump for offline inspection.
void write_matrix_market(const CsrMatrix& a, std::ostream& os);

double norm2(std::span<const double> v);
double norm_inf(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

}  // namespace ekdns
