#include "flowlab/fields.hpp"

#include <cmath>
#include <stdexcept>

#include "flowlab/cfm.hpp"

namespace flowlab {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

/// Adds either a full-size offset or a per-site channel offset to `out`.
void add_offset(LatentState& out, const std::vector<double>& offset) {
    const int total = out.size();
    if (static_cast<int>(offset.size()) == total) {
        for (int i = 0; i < total; ++i)
            out.values[i] += offset[i];
        return;
    }
    if (out.layout.kind == Layout::Kind::Grid &&
        static_cast<int>(offset.size()) == out.layout.c) {
        const int c = out.layout.c;
        for (int s = 0; s < out.layout.sites(); ++s)
            for (int j = 0; j < c; ++j)
                out.values[s * c + j] += offset[j];
        return;
    }
    throw std::invalid_argument("condition offset size " + std::to_string(offset.size()) +
                                " does not match state " + out.layout.str());
}

class AnalyticField : public VelocityField {
public:
    explicit AnalyticField(FieldSpec spec) : spec_(std::move(spec)) {}

    LatentState eval(const LatentState& z, double t, const Condition& c) const final {
        LatentState out = base_eval(z, t);
        switch (c.kind) {
            case Condition::Kind::Null:
                break;
            case Condition::Kind::Label: {
                if (c.label_id < 0 ||
                    c.label_id >= static_cast<int>(spec_.label_offsets.size()))
                    throw std::invalid_argument("field '" + descriptor() + "' has no offset for label " +
                                                std::to_string(c.label_id));
                add_offset(out, spec_.label_offsets[c.label_id]);
                break;
            }
            case Condition::Kind::Embedding:
                throw std::invalid_argument("analytic fields take Null or Label conditions");
        }
        return out;
    }

protected:
    virtual LatentState base_eval(const LatentState& z, double t) const = 0;

    const FieldSpec spec_;
};

class ConstantField final : public AnalyticField {
public:
    using AnalyticField::AnalyticField;

    LatentState base_eval(const LatentState& z, double) const override {
        LatentState out = LatentState::zeros(z.layout);
        add_offset(out, spec_.constant);
        return out;
    }

    std::optional<double> lipschitz_bound() const override { return 0.0; }
    std::optional<double> curvature_bound() const override { return 0.0; }
    std::string descriptor() const override { return "constant"; }
};

void apply_skew(const LatentState& z, double omega, LatentState& out) {
    const int n = z.size();
    if (n % 2 != 0)
        throw std::invalid_argument("skew fields need an even number of values, got " +
                                    std::to_string(n));
    for (int j = 0; j < n; j += 2) {
        out.values[j] += -omega * z.values[j + 1];
        out.values[j + 1] += omega * z.values[j];
    }
}

class LinearSkewField final : public AnalyticField {
public:
    using AnalyticField::AnalyticField;

    LatentState base_eval(const LatentState& z, double) const override {
        LatentState out = LatentState::zeros(z.layout);
        apply_skew(z, spec_.omega, out);
        return out;
    }

    std::optional<double> lipschitz_bound() const override { return std::abs(spec_.omega); }

    std::optional<double> curvature_bound() const override {
        // dv/dt = A*A*z with ||A*A*z|| = omega^2 ||z||; rotations preserve the
        // norm, so trajectories started inside `radius` stay there. Constant
        // label offsets shift trajectories off the sphere, so no certificate
        // is claimed when they are present.
        if (!spec_.label_offsets.empty())
            return std::nullopt;
        return spec_.omega * spec_.omega * spec_.radius;
    }

    std::string descriptor() const override {
        return "linear_skew(omega=" + std::to_string(spec_.omega) + ")";
    }
};

class ContractingSpiralField final : public AnalyticField {
public:
    using AnalyticField::AnalyticField;

    LatentState base_eval(const LatentState& z, double) const override {
        LatentState out = scale(z, -spec_.decay);
        apply_skew(z, spec_.omega, out);
        return out;
    }

    std::optional<double> lipschitz_bound() const override {
        return std::hypot(spec_.decay, spec_.omega);
    }

    std::optional<double> curvature_bound() const override {
        // (-decay*I + omega*J) is normal with eigenvalues -decay +/- i*omega,
        // so ||dv/dt|| = (decay^2 + omega^2) ||z||; with decay >= 0 the
        // forward flow keeps ||z|| <= radius.
        if (!spec_.label_offsets.empty() || spec_.decay < 0.0)
            return std::nullopt;
        const double l2 = spec_.decay * spec_.decay + spec_.omega * spec_.omega;
        return l2 * spec_.radius;
    }

    std::string descriptor() const override {
        return "contracting_spiral(decay=" + std::to_string(spec_.decay) +
               ",omega=" + std::to_string(spec_.omega) + ")";
    }
};

class TimeCurvedField final : public AnalyticField {
public:
    using AnalyticField::AnalyticField;

    LatentState base_eval(const LatentState& z, double t) const override {
        LatentState out = LatentState::zeros(z.layout);
        if (spec_.rot_rate != 0.0)
            apply_skew(z, spec_.rot_rate, out);
        const double force = spec_.amplitude * std::sin(kTwoPi * spec_.frequency * t);
        const double per_coord = force / std::sqrt(static_cast<double>(z.size()));
        for (double& v : out.values)
            v += per_coord;
        return out;
    }

    std::optional<double> lipschitz_bound() const override { return std::abs(spec_.rot_rate); }

    std::optional<double> curvature_bound() const override {
        // dv/dt = rot*J*zdot + a*2*pi*f*cos(.)*e_hat with ||e_hat|| = 1 and
        // ||z(t)|| <= radius + a over [0,1] (the forcing grows the norm at
        // rate at most a).
        if (!spec_.label_offsets.empty())
            return std::nullopt;
        const double rot = std::abs(spec_.rot_rate);
        const double a = std::abs(spec_.amplitude);
        const double sup_z = spec_.radius + a;
        return rot * rot * sup_z + rot * a + kTwoPi * std::abs(spec_.frequency) * a;
    }

    std::string descriptor() const override {
        return "time_curved(rot=" + std::to_string(spec_.rot_rate) +
               ",a=" + std::to_string(spec_.amplitude) + ",f=" + std::to_string(spec_.frequency) +
               ")";
    }
};

}  // namespace

FieldPtr make_field(const FieldSpec& spec) {
    auto check_finite = [](double v, const char* name) {
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string("field parameter '") + name +
                                        "' must be finite");
    };
    switch (spec.kind) {
        case FieldSpec::Kind::Constant:
            if (spec.constant.empty())
                throw std::invalid_argument("constant field needs a nonempty vector");
            for (double v : spec.constant)
                check_finite(v, "constant");
            return std::make_shared<ConstantField>(spec);
        case FieldSpec::Kind::LinearSkew:
            check_finite(spec.omega, "omega");
            return std::make_shared<LinearSkewField>(spec);
        case FieldSpec::Kind::ContractingSpiral:
            check_finite(spec.omega, "omega");
            check_finite(spec.decay, "decay");
            return std::make_shared<ContractingSpiralField>(spec);
        case FieldSpec::Kind::TimeCurved:
            check_finite(spec.rot_rate, "rot_rate");
            check_finite(spec.amplitude, "amplitude");
            check_finite(spec.frequency, "frequency");
            return std::make_shared<TimeCurvedField>(spec);
        case FieldSpec::Kind::Trained:
            return make_trained_field(load_cfm_checkpoint(spec.checkpoint));
    }
    throw std::invalid_argument("make_field: unknown field kind");
}

namespace {

FieldSpec::Kind kind_from_string(const std::string& s) {
    if (s == "constant")
        return FieldSpec::Kind::Constant;
    if (s == "linear_skew")
        return FieldSpec::Kind::LinearSkew;
    if (s == "contracting_spiral")
        return FieldSpec::Kind::ContractingSpiral;
    if (s == "time_curved")
        return FieldSpec::Kind::TimeCurved;
    if (s == "trained")
        return FieldSpec::Kind::Trained;
    throw std::invalid_argument("unknown field kind '" + s + "'");
}

std::string kind_to_string(FieldSpec::Kind k) {
    switch (k) {
        case FieldSpec::Kind::Constant: return "constant";
        case FieldSpec::Kind::LinearSkew: return "linear_skew";
        case FieldSpec::Kind::ContractingSpiral: return "contracting_spiral";
        case FieldSpec::Kind::TimeCurved: return "time_curved";
        case FieldSpec::Kind::Trained: return "trained";
    }
    throw std::logic_error("bad field kind");
}

}  // namespace

FieldSpec FieldSpec::from_json(const nlohmann::json& j) {
    FieldSpec s;
    s.kind = kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("constant"))
        s.constant = j.at("constant").get<std::vector<double>>();
    s.omega = j.value("omega", 0.0);
    s.decay = j.value("decay", 0.0);
    s.rot_rate = j.value("rot_rate", 0.0);
    s.amplitude = j.value("amplitude", 0.0);
    s.frequency = j.value("frequency", 0.0);
    s.radius = j.value("radius", 1.0);
    if (j.contains("label_offsets"))
        s.label_offsets = j.at("label_offsets").get<std::vector<std::vector<double>>>();
    s.checkpoint = j.value("checkpoint", std::string{});
    return s;
}

nlohmann::json FieldSpec::to_json() const {
    nlohmann::json j{{"kind", kind_to_string(kind)}};
    switch (kind) {
        case Kind::Constant:
            j["constant"] = constant;
            break;
        case Kind::LinearSkew:
            j["omega"] = omega;
            j["radius"] = radius;
            break;
        case Kind::ContractingSpiral:
            j["omega"] = omega;
            j["decay"] = decay;
            j["radius"] = radius;
            break;
        case Kind::TimeCurved:
            j["rot_rate"] = rot_rate;
            j["amplitude"] = amplitude;
            j["frequency"] = frequency;
            j["radius"] = radius;
            break;
        case Kind::Trained:
            j["checkpoint"] = checkpoint;
            break;
    }
    if (!label_offsets.empty())
        j["label_offsets"] = label_offsets;
    return j;
}

LatentState cfg_velocity(const VelocityField& field, const LatentState& z, double t,
                         const Condition& c, double w, long* nfe) {
    if (w < 0.0)
        throw std::invalid_argument("cfg_velocity: guidance scale must be >= 0");
    auto ev = [&](const Condition& cond) {
        if (nfe)
            ++*nfe;
        return field.eval(z, t, cond);
    };
    if (w == 1.0)
        return ev(c);
    if (w == 0.0)
        return ev(Condition::null());
    LatentState v_null = ev(Condition::null());
    LatentState v_cond = ev(c);
    return add_scaled(v_null, w, subtract(v_cond, v_null));
}

LatentState cfg_velocity_src_anchored(const VelocityField& field, const LatentState& z, double t,
                                      const Condition& c_src, const Condition& c_tar, double w,
                                      long* nfe) {
    if (w < 0.0)
        throw std::invalid_argument("cfg_velocity_src_anchored: guidance scale must be >= 0");
    auto ev = [&](const Condition& cond) {
        if (nfe)
            ++*nfe;
        return field.eval(z, t, cond);
    };
    if (w == 1.0)
        return ev(c_tar);
    if (w == 0.0)
        return ev(c_src);
    LatentState v_src = ev(c_src);
    LatentState v_tar = ev(c_tar);
    return add_scaled(v_src, w, subtract(v_tar, v_src));
}

}  // namespace flowlab
