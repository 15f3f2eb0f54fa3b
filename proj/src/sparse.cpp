#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "ekdns/linalg.hpp"

namespace ekdns {

CsrMatrix::CsrMatrix(const std::vector<std::vector<int>>& pattern) {
    row_ptr_.reserve(pattern.size() + 1);
    row_ptr_.push_back(0);
    for (const auto& row : pattern) {
        cols_.insert(cols_.end(), row.begin(), row.end());
        row_ptr_.push_back(static_cast<int>(cols_.size()));
    }
    vals_.assign(cols_.size(), 0.0);
    diag_.assign(pattern.size(), -1);
    for (std::size_t r = 0; r < pattern.size(); ++r) diag_[r] = find(static_cast<int>(r), static_cast<int>(r));
}

int CsrMatrix::find(int row, int col) const {
    const auto b = cols_.begin() + row_ptr_[row];
    const auto e = cols_.begin() + row_ptr_[row + 1];
    auto it = std::lower_bound(b, e, col);
    if (it == e || *it != col) return -1;
    return static_cast<int>(it - cols_.begin());
}

void CsrMatrix::add(int row, int col, double v) {
    const int pos = find(row, col);
    if (pos < 0) throw SolverError("entry (" + std::to_string(row) + "," + std::to_string(col) + ") not in sparsity pattern");
    vals_[pos] += v;
}

double CsrMatrix::at(int row, int col) const {
    const int pos = find(row, col);
    return pos < 0 ? 0.0 : vals_[pos];
}

void CsrMatrix::set_identity_row(int row) {
    for (int k = row_ptr_[row]; k < row_ptr_[row + 1]; ++k) vals_[k] = 0.0;
    if (diag_[row] < 0) throw SolverError("row " + std::to_string(row) + " has no diagonal entry");
    vals_[diag_[row]] = 1.0;
}

void CsrMatrix::multiply(std::span<const double> x, std::span<double> y) const {
    const std::size_t n = rows();
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) s += vals_[k] * x[cols_[k]];
        y[r] = s;
    }
}

double CsrMatrix::max_abs() const {
    double m = 0.0;
    for (double v : vals_) m = std::max(m, std::abs(v));
    return m;
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double norm_inf(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void write_matrix_market(const CsrMatrix& a, std::ostream& os) {
    os << "%%MatrixMarket matrix coordinate real general\n";
    os << a.rows() << ' ' << a.rows() << ' ' << a.nnz() << '\n';
    os << std::setprecision(17);
    const auto& rp = a.row_ptr();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        for (int k = rp[r]; k < rp[r + 1]; ++k) {
            os << r + 1 << ' ' << a.cols()[k] + 1 << ' ' << a.values()[k] << '\n';
        }
    }
}

}  // namespace ekdns
