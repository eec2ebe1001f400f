#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowlab/core.hpp"
#include "flowlab/edit.hpp"
#include "flowlab/fields.hpp"
#include "json.hpp"

namespace flowlab {

struct Region {
    LatentState center;
    double radius = 1.0;
};

/// Empirical Lipschitz estimate: max over sampled pairs (and sampled t) of
/// ||v(z) - v(z')|| / ||z - z'||. Deterministic given the seed; pairs closer
/// than 1e-12 are skipped. Requires n_pairs >= 1000.
double estimate_lipschitz(const VelocityField& field, const Condition& c, const Region& region,
                          int n_pairs, std::uint64_t seed);

/// Empirical curvature estimate: max finite-difference ||dv/dt|| along a dense
/// RK4 re-solve of the trajectory's ODE from its initial state.
double estimate_curvature(const VelocityField& field, const Trajectory& traj,
                          int dense_steps = 2000);

struct InversionBound {
    double finite = 0.0;  // (M dt / L) ((1 + L dt)^N - 1)
    double exp = 0.0;     // (M dt / L) (e^L - 1)
};

/// Euler inversion error bounds; L = 0 takes the continuous extension M*dt
/// for both forms.
InversionBound inversion_bound(double lipschitz, double curvature, int n_steps);

/// Editing error bound B(alpha) = (delta_max / L)(e^{alpha L} - 1); L = 0
/// takes the continuous extension delta_max * alpha.
double editing_bound(double delta_max, double lipschitz, double alpha);

/// Max over the cached source states of the instantaneous deviation between
/// the guided target velocity and the source-conditioned velocity.
double delta_max_hat(const VelocityField& field, const Trajectory& src_traj,
                     const Condition& c_src, const Condition& c_tar, double w,
                     EditConfig::CfgMode mode);

struct Decomposition {
    double v_delta_norm = 0.0;  // ||sum of per-step editing deviations||
    double v_cfg_norm = 0.0;    // ||sum of per-step guidance deviations||
    double rhs = 0.0;           // dt * (||V_delta|| + (w-1) ||V_cfg||)
    double lhs = 0.0;           // ||Z^tar_{t_0} - Z^src_{t_0}||
};

/// Accumulates the two deviation sums of a completed standard-guidance run by
/// replaying conditional and unconditional evaluations at the recorded target
/// states.
Decomposition decomposition_accumulate(const EditReport& run, const VelocityField& field,
                                       double w);

struct BoundsRow {
    std::string prop;
    std::string label;
    double measured = 0.0;
    double bound = 0.0;
    bool pass = false;
};

struct BoundsReport {
    double l_hat = 0.0;
    double m_hat = 0.0;
    double delta_max = 0.0;
    double inversion_finite = 0.0;
    double inversion_exp = 0.0;
    std::vector<std::pair<double, double>> editing_curve;  // (alpha, B(alpha))
    std::vector<BoundsRow> rows;

    bool all_pass() const;
    nlohmann::json to_json() const;
};

}  // namespace flowlab
