#pragma once

#include <limits>
#include <vector>

#include "flowlab/core.hpp"
#include "flowlab/fields.hpp"

namespace flowlab {

struct SolverConfig {
    enum class Method { Euler, FixedPoint, Afp, Midpoint };

    Method method = Method::Euler;
    int n_steps = 30;
    int k = 1;  // refinement iterations for FixedPoint / Afp
    Condition condition;
};

/// Documented evaluation counts per forward solve:
///   Euler          N
///   FixedPoint(K)  N*(K+1)   (initial guess plus K iterations at every step)
///   AFP(K)         N + K     (initial guess plus K refinements at t_0, then
///                             one correction for each of the N-1 later steps)
///   Midpoint       2N
long forward_nfe(SolverConfig::Method method, int n_steps, int k);

struct InvertResult {
    Trajectory traj;
    long nfe = 0;
};

/// Forward Euler inversion: Z_{t_{i+1}} = Z_{t_i} + dt * v(Z_{t_i}, t_i, c).
InvertResult invert_euler(const VelocityField& field, const LatentState& z0,
                          const SolverConfig& cfg);

/// Uniform per-step fixed-point refinement (the moving-target baseline).
InvertResult invert_fixed_point(const VelocityField& field, const LatentState& z0,
                                const SolverConfig& cfg);

/// Amortized fixed-point solver: K refinements at the first step, then a
/// single warm-started correction per later step.
InvertResult invert_afp(const VelocityField& field, const LatentState& z0,
                        const SolverConfig& cfg);

/// Classic explicit midpoint, the second-order baseline.
InvertResult invert_midpoint(const VelocityField& field, const LatentState& z0,
                             const SolverConfig& cfg);

InvertResult invert(const VelocityField& field, const LatentState& z0, const SolverConfig& cfg);

struct FixedPointStep {
    LatentState v_star;
    std::vector<double> residuals;  // ||v^{k+1} - v^k|| for k = 0..K-1
    long nfe = 0;
};

/// Iterates v^{k+1} = v(z + dt * v^k, t_next, c) from v^0 = v_init; exactly K
/// iterations, no early exit.
FixedPointStep solve_fixed_point_step(const VelocityField& field, const LatentState& z, double t_i,
                                      double t_next, const Condition& c, const LatentState& v_init,
                                      int k);

struct ReconReport {
    LatentState z0_hat;
    std::vector<LatentState> backward_states;  // index i lives at t_i
    double error = std::numeric_limits<double>::quiet_NaN();
    long nfe = 0;
};

/// Backward Euler reconstruction from z1:
/// zhat_{t_i} = zhat_{t_{i+1}} - dt * v(zhat_{t_{i+1}}, t_{i+1}, c).
ReconReport reconstruct(const VelocityField& field, const LatentState& z1, const Condition& c,
                        int n_steps, const LatentState* z0_truth = nullptr);

/// Dense classical RK4 integration of the same ODE, used as the error oracle
/// where no closed form exists. Requires dense_steps >= 1000.
LatentState reference_solve(const VelocityField& field, const LatentState& z, const Condition& c,
                            Direction direction, int dense_steps);

}  // namespace flowlab
