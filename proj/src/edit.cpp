#include "flowlab/edit.hpp"

#include <cmath>
#include <stdexcept>

#include "flowlab/solvers.hpp"

namespace flowlab {

using nlohmann::json;

namespace {

std::string cfg_mode_str(EditConfig::CfgMode m) {
    return m == EditConfig::CfgMode::Standard ? "standard" : "source_anchored";
}

std::string scheduler_str(EditConfig::AlphaScheduler s) {
    switch (s) {
        case EditConfig::AlphaScheduler::CosineTimeDecay: return "cosine_time_decay";
        case EditConfig::AlphaScheduler::TimeDecayOnly: return "time_decay_only";
        case EditConfig::AlphaScheduler::CosineOnly: return "cosine_only";
    }
    throw std::logic_error("bad scheduler");
}

}  // namespace

EditConfig EditConfig::from_json(const json& j) {
    EditConfig c;
    c.w = j.value("w", c.w);
    c.gamma = j.value("gamma", c.gamma);
    c.n_steps = j.value("n_steps", c.n_steps);
    const std::string mode = j.value("cfg_mode", std::string("standard"));
    if (mode == "standard")
        c.cfg_mode = CfgMode::Standard;
    else if (mode == "source_anchored")
        c.cfg_mode = CfgMode::SourceAnchored;
    else
        throw std::invalid_argument("unknown cfg_mode '" + mode + "'");
    const std::string sched = j.value("scheduler", std::string("cosine_time_decay"));
    if (sched == "cosine_time_decay")
        c.scheduler = AlphaScheduler::CosineTimeDecay;
    else if (sched == "time_decay_only")
        c.scheduler = AlphaScheduler::TimeDecayOnly;
    else if (sched == "cosine_only")
        c.scheduler = AlphaScheduler::CosineOnly;
    else
        throw std::invalid_argument("unknown scheduler '" + sched + "'");
    if (j.contains("alpha_override") && !j.at("alpha_override").is_null())
        c.alpha_override = j.at("alpha_override").get<double>();
    if (j.contains("mask") && !j.at("mask").is_null())
        c.mask = MaskConfig::from_json(j.at("mask"));
    c.clamp_negative_cosine = j.value("clamp_negative_cosine", true);
    if (c.w < 0.0 || c.gamma <= 0.0 || c.n_steps < 1)
        throw std::invalid_argument("edit config requires w >= 0, gamma > 0, n_steps >= 1");
    if (c.alpha_override && (*c.alpha_override < 0.0 || *c.alpha_override > 1.0))
        throw std::invalid_argument("alpha_override must lie in [0,1]");
    return c;
}

json EditConfig::to_json() const {
    json j{{"w", w},
           {"gamma", gamma},
           {"n_steps", n_steps},
           {"cfg_mode", cfg_mode_str(cfg_mode)},
           {"scheduler", scheduler_str(scheduler)},
           {"clamp_negative_cosine", clamp_negative_cosine}};
    j["alpha_override"] = alpha_override ? json(*alpha_override) : json(nullptr);
    j["mask"] = mask ? mask->to_json() : json(nullptr);
    return j;
}

EditConfig preset_high_cfg() {
    EditConfig c;
    c.gamma = 4.5;
    c.w = 6.5;
    return c;
}

EditConfig preset_low_cfg() {
    EditConfig c;
    c.gamma = 5.5;
    c.w = 3.5;
    return c;
}

json EditReport::to_json() const {
    json step_rows = json::array();
    for (const auto& s : steps)
        step_rows.push_back(json{{"i", s.i},
                                 {"t", s.t},
                                 {"alpha", s.alpha},
                                 {"cosine", s.cosine},
                                 {"delta_v_norm", s.delta_v_norm},
                                 {"mask_mean", s.mask_mean}});
    return json{{"final_state", edited.values},
                {"nfe", nfe},
                {"config", config.to_json()},
                {"steps", step_rows}};
}

double alpha_schedule(const LatentState& v_src, const LatentState& v_tar, double t_next,
                      double gamma, bool clamp) {
    if (t_next < 0.0 || t_next > 1.0)
        throw std::invalid_argument("alpha_schedule: t_next outside [0,1]");
    if (gamma <= 0.0)
        throw std::invalid_argument("alpha_schedule: gamma must be > 0");
    const double cos = spatial_cosine(v_src, v_tar);
    double alpha = cos * (1.0 - std::pow(t_next, gamma));
    if (clamp && alpha < 0.0)
        alpha = 0.0;
    return alpha;
}

LatentState edit_velocity(const LatentState& v_src, const LatentState& v_tar, double alpha,
                          const Mask* mask) {
    ensure_same_layout(v_src, v_tar, "edit_velocity");
    if (mask) {
        if (v_src.layout.kind != Layout::Kind::Grid)
            throw std::invalid_argument("edit_velocity: masking requires a grid layout");
        if (mask->h != v_src.layout.h || mask->w != v_src.layout.w)
            throw std::invalid_argument("edit_velocity: mask shape mismatch");
    }
    LatentState out = v_src;
    const int channels = v_src.layout.channels();
    const int sites = v_src.layout.sites();
    for (int s = 0; s < sites; ++s) {
        const double coeff = alpha * (mask ? mask->values[s] : 1.0);
        if (coeff == 0.0)
            continue;  // keep the source velocity bit-exactly
        for (int j = 0; j < channels; ++j) {
            const size_t idx = static_cast<size_t>(s) * channels + j;
            out.values[idx] = v_src.values[idx] +
                              coeff * (v_tar.values[idx] - v_src.values[idx]);
        }
    }
    return out;
}

EditReport backward_edit(const VelocityField& field, const Trajectory& src_traj,
                         const Condition& c_tar, const EditConfig& config) {
    const int n = src_traj.grid.n_steps;
    if (n != config.n_steps)
        throw std::invalid_argument("backward_edit: config n_steps " +
                                    std::to_string(config.n_steps) +
                                    " does not match source trajectory N " + std::to_string(n));
    if (config.alpha_override && (*config.alpha_override < 0.0 || *config.alpha_override > 1.0))
        throw std::invalid_argument("backward_edit: alpha_override must lie in [0,1]");
    const TimeGrid& grid = src_traj.grid;
    const double dt = grid.dt();

    EditReport report;
    report.config = config;
    report.source_traj = src_traj;
    report.edit_traj =
        Trajectory{grid, std::vector<LatentState>(n + 1), std::vector<LatentState>(n), c_tar,
                   Direction::Backward};
    report.edit_traj.states[n] = src_traj.states[n];
    report.steps.reserve(n);

    for (int i = n; i >= 1; --i) {
        const LatentState& z = report.edit_traj.states[i];
        const double t_i = grid.t(i);
        LatentState v_src = finite_diff_velocity(src_traj, i);
        LatentState v_tar =
            config.cfg_mode == EditConfig::CfgMode::Standard
                ? cfg_velocity(field, z, t_i, c_tar, config.w, &report.nfe)
                : cfg_velocity_src_anchored(field, z, t_i, src_traj.condition, c_tar, config.w,
                                            &report.nfe);

        const double cosine = spatial_cosine(v_src, v_tar);
        double alpha;
        if (config.alpha_override) {
            alpha = *config.alpha_override;
        } else {
            const double decay = 1.0 - std::pow(grid.t(i - 1), config.gamma);
            switch (config.scheduler) {
                case EditConfig::AlphaScheduler::CosineTimeDecay:
                    alpha = cosine * decay;
                    break;
                case EditConfig::AlphaScheduler::TimeDecayOnly:
                    alpha = decay;
                    break;
                case EditConfig::AlphaScheduler::CosineOnly:
                    alpha = cosine;
                    break;
                default:
                    throw std::logic_error("bad scheduler");
            }
            if (config.clamp_negative_cosine && alpha < 0.0)
                alpha = 0.0;
        }
        if (config.clamp_negative_cosine && (alpha < 0.0 || alpha > 1.0))
            throw std::runtime_error("backward_edit: alpha " + std::to_string(alpha) +
                                     " outside [0,1] at step " + std::to_string(i));

        Mask refined;
        const Mask* mask_ptr = nullptr;
        double mask_mean = 1.0;
        if (config.mask) {
            refined = mask_refine(subtract(v_tar, v_src), *config.mask);
            mask_ptr = &refined;
            double acc = 0.0;
            for (double v : refined.values)
                acc += v;
            mask_mean = acc / refined.size();
        }

        LatentState v_edit = edit_velocity(v_src, v_tar, alpha, mask_ptr);
        LatentState prev = add_scaled(z, -dt, v_edit);
        if (!all_finite(prev))
            throw std::runtime_error("backward_edit: non-finite state at step " +
                                     std::to_string(i));

        report.steps.push_back(
            {i, t_i, alpha, cosine, distance(v_tar, v_src), mask_mean});
        report.edit_traj.velocities[i - 1] = std::move(v_edit);
        report.edit_traj.states[i - 1] = std::move(prev);
    }
    report.edited = report.edit_traj.states[0];
    return report;
}

std::vector<EditReport> multi_turn_edit(const VelocityField& field, const LatentState& z0_src,
                                        const Condition& c_src, const std::vector<EditTurn>& turns,
                                        const EditConfig& base_config, int afp_k) {
    if (turns.empty())
        throw std::invalid_argument("multi_turn_edit: need at least one turn");
    SolverConfig forward{SolverConfig::Method::Afp, base_config.n_steps, afp_k, c_src};
    Trajectory source = invert_afp(field, z0_src, forward).traj;

    std::vector<EditReport> reports;
    reports.reserve(turns.size());
    for (size_t k = 0; k < turns.size(); ++k) {
        EditConfig cfg = base_config;
        cfg.gamma = turns[k].gamma;
        cfg.mask = turns[k].mask;
        try {
            reports.push_back(backward_edit(field, source, turns[k].c_tar, cfg));
        } catch (const std::exception& e) {
            throw std::runtime_error("multi_turn_edit: turn " + std::to_string(k) +
                                     " failed: " + e.what());
        }
        source = reports.back().edit_traj;
    }
    return reports;
}

}  // namespace flowlab
