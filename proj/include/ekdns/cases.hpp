/// @file cases.hpp
/// @brief Packaged runs: manufactured-solution convergence, 1-D double-layer
///        equilibrium, 2-D electroconvection and the sphere-carving demo.
#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ekdns/stepper.hpp"

namespace ekdns {

// ---------------------------------------------------------------------------
// Manufactured solution on [0,1]^2 with T = cos 2t:
//   u = T sin(2pi x) cos(2pi y),   v = -T cos(2pi x) sin(2pi y),
//   p = T sin(2pi x) cos(2pi y),   phi = -T cos(2pi x) sin(2pi y),
//   c+ = T cos(2pi x) sin(2pi y),  c- = T sin(2pi x) cos(2pi y).

enum class MmsField { U = 0, V, P, Phi, CPlus, CMinus };

class MmsSolution {
public:
    explicit MmsSolution(NondimGroups groups = default_groups());

    static NondimGroups default_groups();
    const NondimGroups& groups() const { return groups_; }

    double value(MmsField f, const Point& x, double t) const;
    std::array<double, 3> gradient(MmsField f, const Point& x, double t) const;
    double laplacian(MmsField f, const Point& x, double t) const;
    double time_derivative(MmsField f, const Point& x, double t) const;
    double divergence(const Point& x, double t) const;

    std::array<double, 3> momentum_forcing(const Point& x, double t) const;
    double poisson_forcing(const Point& x, double t) const;
    double species_forcing(int s, const Point& x, double t) const;

    /// Stepper configuration with forcing and Dirichlet data on every boundary.
    StepperConfig stepper_config(double dt) const;
    /// Exact nodal values at time t.
    void fill_state(const TreeMesh& mesh, double t, Vec& ns, Vec& pnp) const;

private:
    NondimGroups groups_;
};

struct MmsRunConfig {
    int level = 5;
    double dt = 0.0157;
    double t_end = 3.141592653589793;
    int threads = 1;
    SolverConfig ns_solver;
    NewtonConfig newton;
    BlockConfig block;
};

struct MmsErrors {
    int level = 0;
    double h = 0.0;
    double dt = 0.0;
    int steps = 0;
    double time = 0.0;
    double velocity = 0.0;
    double pressure = 0.0;
    double potential = 0.0;
    double c_plus = 0.0;
    double c_minus = 0.0;
    /// L2 distance to a reference run on the same mesh (temporal studies only).
    double velocity_self = 0.0;
    double pressure_self = 0.0;
    double potential_self = 0.0;
    double c_plus_self = 0.0;
    double c_minus_self = 0.0;
    int max_newton = 0;
    bool ok = false;
    std::string message;
};

/// One run from the exact initial data to round(t_end / dt) steps. The final
/// state is copied to `final_state` when given.
MmsErrors run_mms(const MmsRunConfig& config, FieldState* final_state = nullptr);

struct ConvergenceStudy {
    std::vector<MmsErrors> rows;
    /// Least-squares slopes of log error against log h (spatial) or log dt.
    double slope_velocity = 0.0;
    double slope_pressure = 0.0;
    double slope_potential = 0.0;
    double slope_c_plus = 0.0;
    double slope_c_minus = 0.0;
    /// Temporal studies: the run at reference_dt gives the spatial error floor
    /// and the slopes below are fitted to the distances from it.
    std::optional<MmsErrors> reference;
    double self_slope_velocity = 0.0;
    double self_slope_pressure = 0.0;
    double self_slope_potential = 0.0;
    double self_slope_c_plus = 0.0;
    double self_slope_c_minus = 0.0;
};

ConvergenceStudy run_mms_spatial(const std::vector<int>& levels, const MmsRunConfig& base);
/// reference_dt <= 0 skips the reference run.
ConvergenceStudy run_mms_temporal(const std::vector<double>& dts, const MmsRunConfig& base, double reference_dt = 0.0);

double fitted_slope(const std::vector<double>& x, const std::vector<double>& y);

// ---------------------------------------------------------------------------

struct EdlConfig {
    double Lambda = 0.05;
    double dphi = 1.0;
    /// Number of elements across the unit gap (a power of two).
    int cells = 256;
    EquilibrateConfig equilibrate{1e-2, 100.0, 1e-7, 400};
    NewtonConfig newton;
};

struct EdlResult {
    std::vector<double> y, phi, c_plus, c_minus;
    EquilibrateReport report;
};

/// PNP-only equilibrium across a one-element-wide periodic strip: phi = 0 and
/// zero species flux at y = 0, phi = dphi and c = 1 at y = 1.
EdlResult run_edl_1d(const EdlConfig& config);

/// Distance from y = 0 to the first point where |c - 1| falls below 1% of
/// its wall value.
double edl_thickness(const std::vector<double>& y, const std::vector<double>& c);

// ---------------------------------------------------------------------------
// Boundary conditions by face and variable. Faces: left, right, bottom, top;
// variables: u, v, p, phi, c_plus, c_minus.

enum class BcKind { Dirichlet, ZeroFlux, Periodic, Outflow };

struct BoundaryCondition {
    BcKind kind = BcKind::ZeroFlux;
    double value = 0.0;
};

using BoundarySet = std::map<std::string, std::map<std::string, BoundaryCondition>>;

const std::vector<std::string>& boundary_faces();
const std::vector<std::string>& boundary_variables();
std::uint32_t face_tag(const std::string& face);
std::string to_string(BcKind kind);

/// Walls at y = 0 and y = 1, periodic sides.
BoundarySet electroconvection_boundaries(double dphi);
/// Throws ConfigError naming the variable and face of the first gap, or on
/// a periodic face without its partner.
void validate_boundaries(const BoundarySet& bcs);
/// Dirichlet rules for the NS (u, v, p) and PNP (phi, c_plus, c_minus) blocks.
void add_dirichlet_rules(const BoundarySet& bcs, StepperConfig& sc);

// ---------------------------------------------------------------------------

struct ElectroconvectionConfig {
    double dphi = 20.0;
    /// Band refinement: fine level for y < band, coarse elsewhere. Levels count
    /// from a virtual root spanning the long side of the 8 x 1 box.
    int fine_level = 10;
    int coarse_level = 7;
    double band = 0.1;
    double dt = 1e-2;
    double t_end = 10.0;
    double Lambda = 0.01;
    double kappa = 2.0;
    double Sc = 1000.0;
    double perturbation = 0.01;
    std::uint64_t seed = 1;
    int threads = 1;
    SolverConfig ns_solver;
    NewtonConfig newton;
    BlockConfig block;
    EquilibrateConfig equilibrate{1e-2, 100.0, 1e-5, 300};
    /// Record the current every this many steps.
    int current_every = 1;
    /// Empty means electroconvection_boundaries(dphi).
    BoundarySet boundaries;
};

struct CurrentSample {
    double t = 0.0;
    double j_plus = 0.0;
    double j_minus = 0.0;
    double net = 0.0;
};

struct ProfileRow {
    double y = 0.0;
    double dphi_dy = 0.0;
    double c_plus = 0.0;
    double c_minus = 0.0;
    double charge = 0.0;
};

struct ElectroconvectionResult {
    TreeMesh mesh;
    FieldState state;
    std::vector<CurrentSample> current;
    std::vector<ProfileRow> profiles;
    EquilibrateReport equilibrate;
    int vortices = 0;
    std::vector<int> newton_iterations;
    /// Generator state after the initial perturbation.
    std::mt19937_64 rng;
    bool ok = false;
    std::string message;
};

struct ElectroconvectionHooks {
    /// Called once before stepping with the initial (or restarted) state and
    /// the generator after the perturbation (freshly seeded on restart).
    std::function<void(const Stepper&, const FieldState&, const std::mt19937_64&)> on_start;
    /// Called after every step; returning false stops the run.
    std::function<bool(const Stepper&, const FieldState&, const StepReport&)> on_step;
    /// Optional state to continue from instead of equilibrating.
    const FieldState* restart = nullptr;
};

TreeMesh electroconvection_mesh(const ElectroconvectionConfig& config);
StepperConfig electroconvection_stepper(const ElectroconvectionConfig& config);
/// Equilibrated and perturbed initial state.
FieldState electroconvection_initial(const TreeMesh& mesh, const ElectroconvectionConfig& config, Stepper& stepper,
                                     EquilibrateReport* report = nullptr, std::mt19937_64* rng = nullptr);

ElectroconvectionResult run_electroconvection(const ElectroconvectionConfig& config,
                                              const ElectroconvectionHooks& hooks = {});

/// Time-independent averages over x of dphi/dy, c and charge at the distinct node heights.
std::vector<ProfileRow> x_averaged_profiles(const TreeMesh& mesh, const FieldState& state,
                                            const NondimGroups& groups);
/// Counter-rotating cells from sign changes of v_y along x at height y.
int count_vortices(const TreeMesh& mesh, const Vec& ns, double y, int samples = 512);
/// Relative standard deviation of the net current over the last `fraction` of samples.
double current_relative_std(const std::vector<CurrentSample>& trace, double fraction = 0.2);

// ---------------------------------------------------------------------------

struct Sphere {
    Point center{0.5, 0.5, 0.5};
    double radius = 0.2;
};

struct CarvingConfig {
    int dim = 2;
    int level = 6;
    std::vector<Sphere> spheres;
    /// When set, the domain is also cut off outside this sphere.
    std::optional<Sphere> outer;
    double surface_value = 1.0;
    double outer_value = 0.0;
    SolverConfig solver;
};

struct CarvingResult {
    TreeMesh mesh;
    Vec potential;
    std::size_t active = 0;
    std::size_t intercepted = 0;
    std::size_t carved = 0;
    SolveResult solve;
};

/// Laplace problem on the carved box: surface_value on nodes of intercepted
/// elements belonging to the spheres, outer_value on the box faces or the
/// outer sphere.
CarvingResult run_carving_demo(const CarvingConfig& config);

}  // namespace ekdns
