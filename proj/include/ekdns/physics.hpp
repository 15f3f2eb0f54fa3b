/// @file physics.hpp
/// @brief Non-dimensional groups and the stabilized element kernels for the
///        Navier-Stokes and Poisson-Nernst-Planck blocks.
///
/// Momentum is written as
///   (1/Sc)(dv/dt + v.grad v) + grad p - lap v + kappa/(2 Lambda^2) rho_e grad phi = f,
/// Poisson as -2 Lambda^2 lap phi - sum z c = f_phi, and each species as
///   dc/dt + v.grad c - div(D (grad c + z c grad phi)) = f_c.
/// The forcing terms are zero outside manufactured-solution runs.
#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "ekdns/fem.hpp"

namespace ekdns {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr double kFaraday = 96485.33;
inline constexpr double kGasConstant = 8.314;
inline constexpr double kVacuumPermittivity = 8.854e-12;
/// Inverse-estimate constant in the stabilization parameters.
inline constexpr double kCI = 6.0;

struct Species {
    double z = 1.0;
    double D = 1.0;
};

struct NondimGroups {
    double Sc = 1.0;
    double kappa = 1.0;
    double Lambda = 1.0;
    std::vector<Species> species{{1.0, 1.0}, {-1.0, 1.0}};

    int num_species() const { return static_cast<int>(species.size()); }
    /// Throws ConfigError on non-physical values.
    void validate() const;
};

struct DimensionalInputs {
    double eta = 8.90e-4;    // Pa s
    double rho = 1000.0;     // kg/m^3
    double eps_r = 78.5;
    double T = 298.0;        // K
    double L_ch = 1e-6;      // m
    std::vector<double> D{1e-9, 1e-9};          // m^2/s
    std::vector<double> c_initial{1.0, 1.0};    // mol/m^3
    std::vector<double> z{1.0, -1.0};
};

struct NondimResult {
    NondimGroups groups;
    double debye_length = 0.0;       // m
    double ionic_strength = 0.0;     // mol/m^3
    double mean_diffusivity = 0.0;   // m^2/s
};

NondimResult nondimensionalize(const DimensionalInputs& in);

/// Stabilization parameters at one point.
struct TauSet {
    double tau_m = 0.0;
    double tau_sol = 0.0;
    std::vector<double> tau_c;
};

/// tau from the diagonal mesh tensor value g = (2/h)^2 and the advecting velocity.
TauSet compute_taus(int dim, double g, const std::array<double, 3>& v, double dt, const NondimGroups& groups);
TauSet compute_taus(const ElementGeometry& geo, const std::array<double, 3>& v, double dt, const NondimGroups& groups);

/// (beta0 u^{k+1} + beta1 u^k + beta2 u^{k-1}) / dt
struct BdfCoefficients {
    int order = 2;
    double b0 = 1.5;
    double b1 = -2.0;
    double b2 = 0.5;
};

using VectorSource = std::function<std::array<double, 3>(const Point&, double)>;
using ScalarSource = std::function<double(const Point&, double)>;

/// Dof counts per node.
inline int ns_components(int dim) { return dim + 1; }
inline int pnp_components(int nspecies) { return 1 + nspecies; }

/// Inputs of the linear semi-implicit momentum/solenoidality block.
struct NsInputs {
    const NondimGroups* groups = nullptr;
    double dt = 1.0;
    double time = 0.0;  // t^{k+1}
    BdfCoefficients bdf;
    const Vec* vtilde = nullptr;  // extrapolated velocity, NS layout
    const Vec* ns_k = nullptr;
    const Vec* ns_km1 = nullptr;  // may be null for first-order steps
    const Vec* pnp = nullptr;     // latest (phi, c) iterate; null disables the body force
    VectorSource forcing;
};

/// Element kernel of the linear system K (v, p) = F.
ElementKernel ns_kernel(const NsInputs& in);

/// Inputs of the nonlinear PNP block.
struct PnpInputs {
    const NondimGroups* groups = nullptr;
    double dt = 1.0;
    double time = 0.0;
    BdfCoefficients bdf;
    const Vec* vtilde = nullptr;  // NS layout; null means quiescent fluid
    const Vec* pnp_k = nullptr;
    const Vec* pnp_km1 = nullptr;
    /// Steady problems drop the time derivative entirely.
    bool steady = false;
    ScalarSource poisson_forcing;
    std::vector<ScalarSource> species_forcing;
};

/// Residual F(U) in fe; when a matrix is requested, its exact derivative dF/dU
/// with the stabilization parameters frozen.
ElementKernel pnp_kernel(const PnpInputs& in, const Vec& U);
/// Residual only (the kernel ignores the matrix argument).
ElementKernel pnp_residual(const PnpInputs& in, const Vec& U);

/// Species fluxes through a tagged box face, averaged over its length:
/// j^s = -(1/L) int n.(D grad c + D z c grad phi), net = j^1 - j^2.
struct BoundaryFlux {
    std::vector<double> species;
    double net = 0.0;
};
BoundaryFlux boundary_flux(const TreeMesh& mesh, const Vec& pnp, const NondimGroups& groups, std::uint32_t tag);
BoundaryFlux boundary_flux(const TreeMesh& mesh, const Vec& pnp, const NondimGroups& groups, const std::string& tag);

/// Sum of assembled rows of one component over the nodes carrying `tag`,
/// divided by the face length. For natural-boundary rows this is the discrete
/// (consistent) boundary flux.
double consistent_flux(const TreeMesh& mesh, const Vec& residual, int ncomp, int comp, std::uint32_t tag);

/// sqrt(sum_a (N_a, div v)^2) over all nodes.
double divergence_residual(const TreeMesh& mesh, const Vec& ns);

/// Integral of one component over the mesh.
double integrate(const TreeMesh& mesh, const Vec& u, int ncomp, int comp);

/// Nodal charge density sum_s z_s c_s.
Vec charge_density(const Vec& pnp, const NondimGroups& groups);

}  // namespace ekdns
