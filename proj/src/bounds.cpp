#include "flowlab/bounds.hpp"

#include <cmath>
#include <stdexcept>

#include "flowlab/rng.hpp"

namespace flowlab {

namespace {

LatentState sample_in_ball(const Region& region, Rng& rng) {
    const int n = region.center.size();
    std::vector<double> dir(n);
    double nrm = 0.0;
    for (double& v : dir) {
        v = rng.normal();
        nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    if (nrm < 1e-300)
        nrm = 1.0;
    const double r = region.radius * std::pow(rng.uniform(), 1.0 / n);
    LatentState z = region.center;
    for (int i = 0; i < n; ++i)
        z.values[i] += r * dir[i] / nrm;
    return z;
}

}  // namespace

double estimate_lipschitz(const VelocityField& field, const Condition& c, const Region& region,
                          int n_pairs, std::uint64_t seed) {
    if (n_pairs < 1000)
        throw std::invalid_argument("estimate_lipschitz: n_pairs must be >= 1000");
    Rng rng(seed);
    double best = 0.0;
    for (int i = 0; i < n_pairs; ++i) {
        LatentState a = sample_in_ball(region, rng);
        LatentState b = sample_in_ball(region, rng);
        const double t = rng.uniform();
        const double sep = distance(a, b);
        if (sep < 1e-12)
            continue;
        const double dv = distance(field.eval(a, t, c), field.eval(b, t, c));
        best = std::max(best, dv / sep);
    }
    return best;
}

double estimate_curvature(const VelocityField& field, const Trajectory& traj, int dense_steps) {
    if (traj.grid.n_steps < 4)
        throw std::invalid_argument("estimate_curvature: trajectory needs N >= 4");
    if (dense_steps < 1000)
        throw std::invalid_argument("estimate_curvature: dense_steps must be >= 1000");
    const Condition& c = traj.condition;
    const double h = 1.0 / dense_steps;
    LatentState cur = traj.states[0];
    LatentState v_prev = field.eval(cur, 0.0, c);
    double best = 0.0;
    for (int i = 0; i < dense_steps; ++i) {
        const double t = i * h;
        LatentState k1 = field.eval(cur, t, c);
        LatentState k2 = field.eval(add_scaled(cur, 0.5 * h, k1), t + 0.5 * h, c);
        LatentState k3 = field.eval(add_scaled(cur, 0.5 * h, k2), t + 0.5 * h, c);
        LatentState k4 = field.eval(add_scaled(cur, h, k3), t + h, c);
        for (size_t j = 0; j < cur.values.size(); ++j)
            cur.values[j] += h / 6.0 *
                             (k1.values[j] + 2.0 * k2.values[j] + 2.0 * k3.values[j] +
                              k4.values[j]);
        ensure_finite(cur, "estimate_curvature state");
        LatentState v_next = field.eval(cur, (i + 1) * h, c);
        best = std::max(best, distance(v_next, v_prev) / h);
        v_prev = std::move(v_next);
    }
    return best;
}

InversionBound inversion_bound(double lipschitz, double curvature, int n_steps) {
    if (lipschitz < 0.0 || curvature < 0.0 || n_steps < 1)
        throw std::invalid_argument("inversion_bound: require L >= 0, M >= 0, N >= 1");
    const double dt = 1.0 / n_steps;
    InversionBound b;
    if (lipschitz == 0.0) {
        // Continuous extension: both forms tend to M * dt as L -> 0.
        b.finite = curvature * dt;
        b.exp = curvature * dt;
        return b;
    }
    const double lead = curvature * dt / lipschitz;
    b.finite = lead * (std::pow(1.0 + lipschitz * dt, n_steps) - 1.0);
    b.exp = lead * (std::exp(lipschitz) - 1.0);
    return b;
}

double editing_bound(double delta_max, double lipschitz, double alpha) {
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("editing_bound: alpha outside [0,1]");
    if (lipschitz < 0.0 || delta_max < 0.0)
        throw std::invalid_argument("editing_bound: require L >= 0 and delta_max >= 0");
    if (lipschitz == 0.0)
        return delta_max * alpha;
    return delta_max / lipschitz * (std::exp(alpha * lipschitz) - 1.0);
}

double delta_max_hat(const VelocityField& field, const Trajectory& src_traj,
                     const Condition& c_src, const Condition& c_tar, double w,
                     EditConfig::CfgMode mode) {
    double best = 0.0;
    for (int i = 0; i <= src_traj.grid.n_steps; ++i) {
        const LatentState& z = src_traj.states[i];
        const double t = src_traj.grid.t(i);
        LatentState guided = mode == EditConfig::CfgMode::Standard
                                 ? cfg_velocity(field, z, t, c_tar, w)
                                 : cfg_velocity_src_anchored(field, z, t, c_src, c_tar, w);
        best = std::max(best, distance(guided, field.eval(z, t, c_src)));
    }
    return best;
}

Decomposition decomposition_accumulate(const EditReport& run, const VelocityField& field,
                                       double w) {
    if (run.config.cfg_mode != EditConfig::CfgMode::Standard)
        throw std::invalid_argument("decomposition_accumulate: run must use standard guidance");
    if (run.steps.empty() || run.edit_traj.states.empty() || run.source_traj.states.empty())
        throw std::invalid_argument("decomposition_accumulate: run is missing per-step records");
    const int n = run.edit_traj.grid.n_steps;
    const Condition& c_tar = run.edit_traj.condition;

    LatentState v_delta = LatentState::zeros(run.edit_traj.states[0].layout);
    LatentState v_cfg = v_delta;
    for (int i = 1; i <= n; ++i) {
        const LatentState& z_tar = run.edit_traj.states[i];
        const double t = run.edit_traj.grid.t(i);
        LatentState v_cond = field.eval(z_tar, t, c_tar);
        LatentState v_null = field.eval(z_tar, t, Condition::null());
        LatentState v_src = finite_diff_velocity(run.source_traj, i);
        v_delta = add_scaled(v_delta, 1.0, subtract(v_cond, v_src));
        v_cfg = add_scaled(v_cfg, 1.0, subtract(v_cond, v_null));
    }

    Decomposition d;
    d.v_delta_norm = norm(v_delta);
    d.v_cfg_norm = norm(v_cfg);
    d.rhs = run.edit_traj.grid.dt() * (d.v_delta_norm + (w - 1.0) * d.v_cfg_norm);
    d.lhs = distance(run.edit_traj.states[0], run.source_traj.states[0]);
    return d;
}

bool BoundsReport::all_pass() const {
    for (const auto& row : rows)
        if (!row.pass)
            return false;
    return true;
}

nlohmann::json BoundsReport::to_json() const {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& [alpha, bound] : editing_curve)
        curve.push_back(nlohmann::json{{"alpha", alpha}, {"bound", bound}});
    nlohmann::json row_arr = nlohmann::json::array();
    for (const auto& row : rows)
        row_arr.push_back(nlohmann::json{{"prop", row.prop},
                                         {"label", row.label},
                                         {"measured", row.measured},
                                         {"bound", row.bound},
                                         {"pass", row.pass}});
    return nlohmann::json{{"l_hat", l_hat},
                          {"m_hat", m_hat},
                          {"delta_max", delta_max},
                          {"inversion_finite", inversion_finite},
                          {"inversion_exp", inversion_exp},
                          {"editing_curve", curve},
                          {"rows", row_arr},
                          {"all_pass", all_pass()}};
}

}  // namespace flowlab
