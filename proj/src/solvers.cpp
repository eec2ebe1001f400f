#include "flowlab/solvers.hpp"

#include <stdexcept>
#include <string>

namespace flowlab {

namespace {

void check_step_finite(const LatentState& z, int step, const char* what) {
    if (!all_finite(z))
        throw std::runtime_error(std::string(what) + ": non-finite state at step " +
                                 std::to_string(step));
}

Trajectory new_forward_traj(int n, const LatentState& z0, const Condition& c) {
    Trajectory traj{TimeGrid(n), {}, {}, c, Direction::Forward};
    traj.states.reserve(n + 1);
    traj.velocities.reserve(n);
    traj.states.push_back(z0);
    return traj;
}

}  // namespace

long forward_nfe(SolverConfig::Method method, int n_steps, int k) {
    switch (method) {
        case SolverConfig::Method::Euler:
            return n_steps;
        case SolverConfig::Method::FixedPoint:
            return static_cast<long>(n_steps) * (k + 1);
        case SolverConfig::Method::Afp:
            return static_cast<long>(n_steps) + k;
        case SolverConfig::Method::Midpoint:
            return 2L * n_steps;
    }
    throw std::logic_error("bad solver method");
}

InvertResult invert_euler(const VelocityField& field, const LatentState& z0,
                          const SolverConfig& cfg) {
    const int n = cfg.n_steps;
    TimeGrid grid(n);
    const double dt = grid.dt();
    Trajectory traj = new_forward_traj(n, z0, cfg.condition);
    long nfe = 0;
    for (int i = 0; i < n; ++i) {
        LatentState v = field.eval(traj.states[i], grid.t(i), cfg.condition);
        ++nfe;
        LatentState next = add_scaled(traj.states[i], dt, v);
        check_step_finite(next, i, "invert_euler");
        traj.velocities.push_back(std::move(v));
        traj.states.push_back(std::move(next));
    }
    return {std::move(traj), nfe};
}

FixedPointStep solve_fixed_point_step(const VelocityField& field, const LatentState& z, double t_i,
                                      double t_next, const Condition& c, const LatentState& v_init,
                                      int k) {
    if (k < 1)
        throw std::invalid_argument("solve_fixed_point_step: K must be >= 1");
    const double dt = t_next - t_i;
    if (dt <= 0.0)
        throw std::invalid_argument("solve_fixed_point_step: t_next must exceed t_i");
    FixedPointStep out;
    out.residuals.reserve(k);
    LatentState v = v_init;
    for (int it = 0; it < k; ++it) {
        LatentState v_next = field.eval(add_scaled(z, dt, v), t_next, c);
        ++out.nfe;
        if (!all_finite(v_next))
            throw std::runtime_error("solve_fixed_point_step: non-finite iterate " +
                                     std::to_string(it));
        out.residuals.push_back(distance(v_next, v));
        v = std::move(v_next);
    }
    out.v_star = std::move(v);
    return out;
}

InvertResult invert_fixed_point(const VelocityField& field, const LatentState& z0,
                                const SolverConfig& cfg) {
    if (cfg.k < 1)
        throw std::invalid_argument("invert_fixed_point: K must be >= 1");
    const int n = cfg.n_steps;
    TimeGrid grid(n);
    const double dt = grid.dt();
    Trajectory traj = new_forward_traj(n, z0, cfg.condition);
    long nfe = 0;
    for (int i = 0; i < n; ++i) {
        LatentState v0 = field.eval(traj.states[i], grid.t(i), cfg.condition);
        ++nfe;
        FixedPointStep fp = solve_fixed_point_step(field, traj.states[i], grid.t(i), grid.t(i + 1),
                                                   cfg.condition, v0, cfg.k);
        nfe += fp.nfe;
        LatentState next = add_scaled(traj.states[i], dt, fp.v_star);
        check_step_finite(next, i, "invert_fixed_point");
        traj.velocities.push_back(std::move(fp.v_star));
        traj.states.push_back(std::move(next));
    }
    return {std::move(traj), nfe};
}

InvertResult invert_afp(const VelocityField& field, const LatentState& z0,
                        const SolverConfig& cfg) {
    if (cfg.k < 1)
        throw std::invalid_argument("invert_afp: K must be >= 1");
    const int n = cfg.n_steps;
    TimeGrid grid(n);
    const double dt = grid.dt();
    Trajectory traj = new_forward_traj(n, z0, cfg.condition);
    long nfe = 0;

    // Initial guess, then K amortized refinements at t_0.
    LatentState v = field.eval(z0, grid.t(0), cfg.condition);
    ++nfe;
    for (int it = 0; it < cfg.k; ++it) {
        v = field.eval(add_scaled(z0, dt, v), grid.t(1), cfg.condition);
        ++nfe;
        if (!all_finite(v))
            throw std::runtime_error("invert_afp: non-finite refinement iterate " +
                                     std::to_string(it));
    }
    {
        LatentState next = add_scaled(z0, dt, v);
        check_step_finite(next, 0, "invert_afp");
        traj.velocities.push_back(v);
        traj.states.push_back(std::move(next));
    }

    // One warm-started correction per later step.
    for (int i = 1; i < n; ++i) {
        LatentState predictor = add_scaled(traj.states[i], dt, v);
        v = field.eval(predictor, grid.t(i + 1), cfg.condition);
        ++nfe;
        LatentState next = add_scaled(traj.states[i], dt, v);
        check_step_finite(next, i, "invert_afp");
        traj.velocities.push_back(v);
        traj.states.push_back(std::move(next));
    }
    return {std::move(traj), nfe};
}

InvertResult invert_midpoint(const VelocityField& field, const LatentState& z0,
                             const SolverConfig& cfg) {
    const int n = cfg.n_steps;
    TimeGrid grid(n);
    const double dt = grid.dt();
    Trajectory traj = new_forward_traj(n, z0, cfg.condition);
    long nfe = 0;
    for (int i = 0; i < n; ++i) {
        const LatentState& z = traj.states[i];
        LatentState v1 = field.eval(z, grid.t(i), cfg.condition);
        LatentState v_half =
            field.eval(add_scaled(z, 0.5 * dt, v1), grid.t(i) + 0.5 * dt, cfg.condition);
        nfe += 2;
        LatentState next = add_scaled(z, dt, v_half);
        check_step_finite(next, i, "invert_midpoint");
        traj.velocities.push_back(std::move(v_half));
        traj.states.push_back(std::move(next));
    }
    return {std::move(traj), nfe};
}

InvertResult invert(const VelocityField& field, const LatentState& z0, const SolverConfig& cfg) {
    switch (cfg.method) {
        case SolverConfig::Method::Euler:
            return invert_euler(field, z0, cfg);
        case SolverConfig::Method::FixedPoint:
            return invert_fixed_point(field, z0, cfg);
        case SolverConfig::Method::Afp:
            return invert_afp(field, z0, cfg);
        case SolverConfig::Method::Midpoint:
            return invert_midpoint(field, z0, cfg);
    }
    throw std::logic_error("bad solver method");
}

ReconReport reconstruct(const VelocityField& field, const LatentState& z1, const Condition& c,
                        int n_steps, const LatentState* z0_truth) {
    TimeGrid grid(n_steps);
    const double dt = grid.dt();
    ReconReport report;
    report.backward_states.assign(n_steps + 1, LatentState{});
    report.backward_states[n_steps] = z1;
    for (int i = n_steps - 1; i >= 0; --i) {
        const LatentState& cur = report.backward_states[i + 1];
        LatentState v = field.eval(cur, grid.t(i + 1), c);
        ++report.nfe;
        LatentState prev = add_scaled(cur, -dt, v);
        check_step_finite(prev, i, "reconstruct");
        report.backward_states[i] = std::move(prev);
    }
    report.z0_hat = report.backward_states[0];
    if (z0_truth)
        report.error = distance(report.z0_hat, *z0_truth);
    return report;
}

LatentState reference_solve(const VelocityField& field, const LatentState& z, const Condition& c,
                            Direction direction, int dense_steps) {
    if (dense_steps < 1000)
        throw std::invalid_argument("reference_solve: dense_steps must be >= 1000");
    const double t_start = direction == Direction::Forward ? 0.0 : 1.0;
    const double t_end = direction == Direction::Forward ? 1.0 : 0.0;
    const double h = (t_end - t_start) / dense_steps;
    LatentState cur = z;
    for (int i = 0; i < dense_steps; ++i) {
        const double t = t_start + i * h;
        LatentState k1 = field.eval(cur, t, c);
        LatentState k2 = field.eval(add_scaled(cur, 0.5 * h, k1), t + 0.5 * h, c);
        LatentState k3 = field.eval(add_scaled(cur, 0.5 * h, k2), t + 0.5 * h, c);
        LatentState k4 = field.eval(add_scaled(cur, h, k3), t + h, c);
        for (size_t j = 0; j < cur.values.size(); ++j)
            cur.values[j] += h / 6.0 *
                             (k1.values[j] + 2.0 * k2.values[j] + 2.0 * k3.values[j] +
                              k4.values[j]);
        check_step_finite(cur, i, "reference_solve");
    }
    return cur;
}

}  // namespace flowlab
