/// @file stepper.hpp
/// @brief BDF time integration, Newton driver and the NS/PNP block iteration.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ekdns/physics.hpp"

namespace ekdns {

/// Backward-difference coefficients; order 1 or 2.
BdfCoefficients bdf_coefficients(int order);

/// 2 v^k - v^{k-1}, componentwise.
Vec extrapolate_velocity(const Vec& v_k, const Vec& v_km1);

struct NewtonConfig {
    /// Converged when max |dU| <= tol ...
    double tol = 1e-8;
    /// ... or when ||F|| <= max(residual_atol, residual_rtol * ||F0||) after an update.
    double residual_rtol = 1e-7;
    double residual_atol = 1e-13;
    int max_iters = 20;
    SolverConfig linear;

    void validate() const;
};

struct NewtonResult {
    int iterations = 0;
    bool converged = false;
    int linear_iterations = 0;
    std::vector<double> step_norms;      // max |dU| per iteration
    std::vector<double> residual_norms;  // ||F|| before each update, then after the last
    std::string message;
};

/// Fills sys with the Newton system at U: the Jacobian and -F(U) with Dirichlet
/// rows already substituted, so that solving gives the update dU.
using NewtonSystemBuilder = std::function<void(const Vec& U, SparseSystem& sys)>;
/// Optional hook applied to U after each update (e.g. hanging-node constraints).
using NewtonPostUpdate = std::function<void(Vec& U)>;

NewtonResult newton_solve(const NewtonSystemBuilder& build, SparseSystem& sys, Vec& U, const NewtonConfig& config,
                          const NewtonPostUpdate& post = nullptr);

/// Dirichlet data on one component, either on every node carrying any of
/// `tags` or on a single node.
struct DirichletRule {
    int comp = 0;
    std::uint32_t tags = 0;
    int node = -1;
    ScalarSource value;
};

/// dof -> value at time t; hanging nodes are skipped.
std::map<int, double> collect_dirichlet(const TreeMesh& mesh, int ncomp, const std::vector<DirichletRule>& rules,
                                        double t);

struct BlockConfig {
    int max_iters = 2;
    /// Early exit on relative change of (v, phi, c) between block iterations.
    double tol = 1e-6;
};

struct StepperConfig {
    double dt = 1e-2;
    NondimGroups groups;
    SolverConfig ns_solver;
    NewtonConfig newton;
    BlockConfig block;
    std::vector<DirichletRule> ns_bc;
    std::vector<DirichletRule> pnp_bc;
    VectorSource ns_forcing;
    ScalarSource poisson_forcing;
    std::vector<ScalarSource> species_forcing;
    /// PNP-only runs keep the velocity fixed.
    bool solve_ns = true;
    int threads = 1;
};

/// Nodal unknowns at levels k and k-1. `step` counts completed steps; the
/// first step uses BDF1 and the velocity at level k as its extrapolation.
struct FieldState {
    int dim = 2;
    int nspecies = 2;
    Vec ns, ns_prev;
    Vec pnp, pnp_prev;
    std::int64_t step = 0;
    double time = 0.0;

    void resize(std::size_t nodes);
};

struct StepReport {
    bool ok = false;
    int block_iterations = 0;
    int ns_linear_iterations = 0;
    std::vector<int> newton_iterations;
    double block_change = 0.0;
    std::string message;
};

class Stepper {
public:
    Stepper(const TreeMesh& mesh, StepperConfig config);

    const TreeMesh& mesh() const { return *mesh_; }
    const StepperConfig& config() const { return cfg_; }
    StepperConfig& config() { return cfg_; }

    /// advance_step: block iteration then rotation of time levels. On failure
    /// the state is left untouched.
    StepReport advance(FieldState& state);

    /// Newton solve of the PNP block for one step of size dt with BDF `order`
    /// at time t (the unknowns are U, initial guess on input).
    NewtonResult solve_pnp(Vec& U, const Vec& pnp_k, const Vec* pnp_km1, const Vec* vtilde, int order, double dt,
                           double t);
    /// Linear NS solve for one step.
    SolveResult solve_ns(Vec& ns_new, const Vec& ns_k, const Vec* ns_km1, const Vec& vtilde, const Vec* pnp, int order,
                         double dt, double t);

    /// Assembled PNP residual F(U) with the step data of solve_pnp (no Dirichlet rows).
    Vec pnp_residual_vector(const Vec& U, const Vec& pnp_k, const Vec* pnp_km1, const Vec* vtilde, int order, double dt,
                            double t) const;

    const Assembler& ns_assembler() const { return ns_asm_; }
    const Assembler& pnp_assembler() const { return pnp_asm_; }

private:
    PnpInputs pnp_inputs(const Vec& pnp_k, const Vec* pnp_km1, const Vec* vtilde, int order, double dt, double t) const;

    const TreeMesh* mesh_;
    StepperConfig cfg_;
    Assembler ns_asm_;
    Assembler pnp_asm_;
    SparseSystem ns_sys_;
    SparseSystem pnp_sys_;
};

struct EquilibrateConfig {
    double dt = 1e-2;
    double max_dt_factor = 100.0;
    double steady_tol = 1e-6;
    int max_steps = 400;
};

struct EquilibrateReport {
    bool converged = false;
    int steps = 0;
    double final_rate = 0.0;  // max |c^{k+1} - c^k| / dt at the last step
    double final_dt = 0.0;
    int newton_iterations = 0;
};

/// PNP-only pseudo-time stepping with the velocity held at zero. The step
/// grows by 2 after every successful Newton solve (capped at max_dt_factor *
/// dt) and is halved on failure. Time levels of the state are reset so that
/// a following coupled run starts with BDF1.
EquilibrateReport equilibrate_pnp(Stepper& stepper, FieldState& state, const EquilibrateConfig& config);

/// c <- c (1 + amplitude * xi) with xi uniform in [-1, 1], one draw per node
/// and species in node order. Constraints are re-applied afterwards.
void perturb_concentrations(const TreeMesh& mesh, FieldState& state, double amplitude, std::mt19937_64& rng);

/// Uniform double in [-1, 1] from one engine draw, independent of the
/// standard library's distribution implementation.
double symmetric_unit(std::mt19937_64& rng);

}  // namespace ekdns
