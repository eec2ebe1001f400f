#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "flowlab/core.hpp"
#include "json.hpp"

namespace flowlab {

/// A conditional velocity field v(z, t, c). Implementations are pure:
/// identical inputs produce bit-identical outputs, so fields can be shared
/// read-only across runs.
class VelocityField {
public:
    virtual ~VelocityField() = default;

    virtual LatentState eval(const LatentState& z, double t, const Condition& c) const = 0;

    /// Certified global Lipschitz constant in z, when known in closed form.
    virtual std::optional<double> lipschitz_bound() const { return std::nullopt; }

    /// Certified bound on ||dv/dt|| along forward trajectories started inside
    /// the field's documented operating region, when known in closed form.
    virtual std::optional<double> curvature_bound() const { return std::nullopt; }

    virtual std::string descriptor() const = 0;
};

using FieldPtr = std::shared_ptr<const VelocityField>;

/// Declarative description of a field in the analytic zoo (or a trained
/// checkpoint). `radius` is the operating-region bound (max starting norm)
/// used by the curvature certificates. `label_offsets`, when present, adds a
/// constant per-label velocity offset: v(z, t, Label(k)) = v(z, t) + b_k and
/// v(z, t, Null) = v(z, t). Offsets are given at full state size or, for grid
/// layouts, at channel size (broadcast per site).
struct FieldSpec {
    enum class Kind { Constant, LinearSkew, ContractingSpiral, TimeCurved, Trained };

    Kind kind = Kind::Constant;
    std::vector<double> constant;             // Constant
    double omega = 0.0;                       // LinearSkew / ContractingSpiral rotation rate
    double decay = 0.0;                       // ContractingSpiral contraction rate
    double rot_rate = 0.0;                    // TimeCurved linear part
    double amplitude = 0.0;                   // TimeCurved forcing amplitude
    double frequency = 0.0;                   // TimeCurved forcing frequency (cycles over [0,1])
    double radius = 1.0;                      // operating-region bound for curvature certificates
    std::vector<std::vector<double>> label_offsets;
    std::string checkpoint;                   // Trained

    static FieldSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Builds a field from its spec. Analytic kinds carry closed-form L and (when
/// no label offsets shift the trajectories) M certificates. Trained kind loads
/// the checkpoint file.
FieldPtr make_field(const FieldSpec& spec);

/// Classifier-free guidance: v(z,t,null) + w * (v(z,t,c) - v(z,t,null)).
/// w == 1 and w == 0 collapse to a single conditional / unconditional
/// evaluation so those cases are bit-exact. `nfe` (when given) is incremented
/// once per field evaluation.
LatentState cfg_velocity(const VelocityField& field, const LatentState& z, double t,
                         const Condition& c, double w, long* nfe = nullptr);

/// Source-anchored guidance variant: v(z,t,c_src) + w * (v(z,t,c_tar) - v(z,t,c_src)).
LatentState cfg_velocity_src_anchored(const VelocityField& field, const LatentState& z, double t,
                                      const Condition& c_src, const Condition& c_tar, double w,
                                      long* nfe = nullptr);

}  // namespace flowlab
