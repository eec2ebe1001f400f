#pragma once

#include <optional>
#include <vector>

#include "flowlab/core.hpp"
#include "flowlab/fields.hpp"
#include "flowlab/mask.hpp"
#include "json.hpp"

namespace flowlab {

struct EditConfig {
    enum class CfgMode { Standard, SourceAnchored };
    enum class AlphaScheduler { CosineTimeDecay, TimeDecayOnly, CosineOnly };

    double w = 3.5;       // guidance scale >= 0
    double gamma = 5.5;   // decay rate > 0
    int n_steps = 30;
    CfgMode cfg_mode = CfgMode::Standard;
    AlphaScheduler scheduler = AlphaScheduler::CosineTimeDecay;
    std::optional<double> alpha_override;  // bypasses the scheduler entirely
    std::optional<MaskConfig> mask;
    bool clamp_negative_cosine = true;

    static EditConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

// Shipped starting points for the (gamma, w) trade-off; tune per field.
EditConfig preset_high_cfg();  // gamma = 4.5, w = 6.5
EditConfig preset_low_cfg();   // gamma = 5.5, w = 3.5

struct EditStepRecord {
    int i = 0;
    double t = 0.0;
    double alpha = 0.0;
    double cosine = 0.0;
    double delta_v_norm = 0.0;
    double mask_mean = 1.0;
};

struct EditReport {
    LatentState edited;       // Z^edit at t_0
    Trajectory edit_traj;     // backward trajectory under the target condition
    Trajectory source_traj;   // the source trajectory this edit was anchored to
    std::vector<EditStepRecord> steps;  // recorded for i = N..1
    long nfe = 0;
    EditConfig config;

    nlohmann::json to_json() const;
};

/// Edit coefficient: spatial_cosine(v_src, v_tar) * (1 - t_next^gamma),
/// clamped below at 0 when `clamp` is set. The decay factor is evaluated at
/// the next (smaller) timestep so the first backward step is never fully
/// truncated.
double alpha_schedule(const LatentState& v_src, const LatentState& v_tar, double t_next,
                      double gamma, bool clamp);

/// v_src + alpha * M (x) (v_tar - v_src), with M broadcast across channels and
/// treated as all-ones when absent. Sites with a zero coefficient return the
/// source velocity bit-exactly.
LatentState edit_velocity(const LatentState& v_src, const LatentState& v_tar, double alpha,
                          const Mask* mask = nullptr);

/// Backward editing anchored to a cached forward trajectory: source velocities
/// come from finite differences of src_traj (no extra evaluations), target
/// velocities from the configured guidance mode.
EditReport backward_edit(const VelocityField& field, const Trajectory& src_traj,
                         const Condition& c_tar, const EditConfig& config);

struct EditTurn {
    Condition c_tar;
    double gamma = 5.5;
    std::optional<MaskConfig> mask;
};

/// One forward inversion, then sequential turns; each turn's edit trajectory
/// becomes the next turn's source trajectory.
std::vector<EditReport> multi_turn_edit(const VelocityField& field, const LatentState& z0_src,
                                        const Condition& c_src, const std::vector<EditTurn>& turns,
                                        const EditConfig& base_config, int afp_k = 1);

}  // namespace flowlab
