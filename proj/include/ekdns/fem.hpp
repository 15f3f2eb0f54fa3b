/// @file fem.hpp
/// @brief Multilinear reference element, Gauss quadrature and global assembly
///        with hanging-node condensation and Dirichlet substitution.
#pragma once

#include <array>
#include <functional>
#include <map>
#include <vector>

#include "ekdns/linalg.hpp"
#include "ekdns/mesh.hpp"

namespace ekdns {

inline constexpr int kMaxCorners = 8;

/// Values and reference gradients of the 2^dim bilinear/trilinear shape
/// functions at a point of [-1,1]^dim. Corner a has coordinate bit k of a set
/// to +1 along axis k.
void shape_eval(int dim, const Point& xi, double* values, std::array<double, 3>* grads);

/// Gauss-Legendre points and weights on [-1,1].
std::vector<std::pair<double, double>> gauss_legendre(int n);

/// Tensor Gauss rule with tabulated shape data.
struct ReferenceElement {
    int dim = 2;
    int num_nodes = 4;
    int points_per_axis = 2;
    std::vector<Point> points;
    std::vector<double> weights;
    /// shape[q * num_nodes + a]
    std::vector<double> shape;
    /// ref_grad[q * num_nodes + a][k]
    std::vector<std::array<double, 3>> ref_grad;

    int num_points() const { return static_cast<int>(weights.size()); }
    static const ReferenceElement& get(int dim, int points_per_axis = 2);
};

/// Axis-aligned cube element: corners lo + h * {0,1}^dim.
struct ElementGeometry {
    int dim = 2;
    Point lo{0, 0, 0};
    double h = 1.0;

    /// Diagonal entry of G = J^{-T} J^{-1}.
    double g_diag() const { return (2.0 / h) * (2.0 / h); }
    double jacobian() const;
    Point map(const Point& xi) const;
    /// Reference coordinates of a physical point.
    Point inverse_map(const Point& x) const;
};

/// Physical quadrature data for one element.
struct ElementQuad {
    int dim = 2;
    int nq = 0;
    int nn = 0;
    const double* shape = nullptr;
    std::vector<std::array<double, 3>> grad;  // grad[q * nn + a]
    std::vector<double> jxw;
    std::vector<Point> x;

    double n(int q, int a) const { return shape[q * nn + a]; }
    const std::array<double, 3>& dn(int q, int a) const { return grad[q * nn + a]; }

    void reinit(const ReferenceElement& ref, const ElementGeometry& geo);
};

/// Everything a kernel sees for one element.
struct ElementContext {
    std::size_t element = 0;
    ElementGeometry geometry;
    const ElementQuad* quad = nullptr;
    const int* nodes = nullptr;
    int ncomp = 1;
};

/// Fills the local matrix (row-major, size n x n with n = corners * ncomp,
/// local dof = corner * ncomp + comp) and vector. Both arrive zeroed; the
/// matrix pointer is null when only the vector is requested.
using ElementKernel = std::function<void(const ElementContext&, double* ke, double* fe)>;

/// Node-major interleaved dof numbering: dof = node * ncomp + comp.
inline int dof_index(int node, int ncomp, int comp) { return node * ncomp + comp; }

/// Global assembly over Active and Intercepted leaves. Contributions of hanging
/// nodes are distributed to their masters; hanging rows become identity rows
/// with zero right-hand side.
class Assembler {
public:
    Assembler(const TreeMesh& mesh, int ncomp);

    const TreeMesh& mesh() const { return *mesh_; }
    int ncomp() const { return ncomp_; }
    std::size_t num_dofs() const { return mesh_->num_nodes() * ncomp_; }
    void set_threads(int n) { threads_ = n < 1 ? 1 : n; }
    int threads() const { return threads_; }

    /// Fresh zeroed system with the assembled sparsity pattern.
    SparseSystem make_system() const;

    /// sys.matrix and sys.rhs are overwritten. Throws SolverError naming the
    /// element when the kernel produces a non-finite value.
    void assemble(const ElementKernel& kernel, SparseSystem& sys) const;
    /// Vector-only assembly (matrix pointer passed to the kernel is null).
    void assemble_vector(const ElementKernel& kernel, Vec& rhs) const;

    const std::vector<int>& constrained_dofs() const { return hanging_dofs_; }

private:
    struct ElementMap {
        std::vector<int> gnodes;
        // For each corner: (index into gnodes, weight)
        std::vector<std::vector<std::pair<int, double>>> corner;
        std::vector<int> block_offset;  // gnodes^2 offsets of column block within row
        bool plain = true;
    };

    void condense_and_scatter(const ElementMap& em, const double* ke, const double* fe, SparseSystem* sys,
                              Vec& rhs) const;
    template <class Fn>
    void run_elements(bool want_matrix, Fn&& scatter, const ElementKernel& kernel) const;

    const TreeMesh* mesh_;
    int ncomp_;
    int threads_ = 1;
    std::vector<std::vector<int>> pattern_;
    std::vector<ElementMap> maps_;
    std::vector<int> hanging_dofs_;
    CsrMatrix template_;
};

/// Replace rows by identity rows with the given right-hand-side values.
void apply_dirichlet(SparseSystem& sys, const std::map<int, double>& values);

/// Set hanging-node values from their masters.
void apply_constraints(const TreeMesh& mesh, int ncomp, Vec& u);

/// Nodal interpolant of f (one component) into u; constraints applied after.
void interpolate(const TreeMesh& mesh, int ncomp, int comp, const std::function<double(const Point&)>& f,
                 Vec& u);

/// sqrt(sum_e int_e (u_h - u)^2) with a 3-point Gauss rule per direction.
double l2_error(const TreeMesh& mesh, const Vec& u, int ncomp, int comp,
                const std::function<double(const Point&)>& exact);

/// Finite-element value and gradient of one component at a physical point.
struct PointValue {
    double value = 0.0;
    std::array<double, 3> grad{0, 0, 0};
    bool found = false;
};
PointValue evaluate(const TreeMesh& mesh, const Vec& u, int ncomp, int comp, const Point& x);

ElementGeometry element_geometry(const TreeMesh& mesh, std::size_t e);

}  // namespace ekdns
