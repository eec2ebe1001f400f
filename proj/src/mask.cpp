#include "flowlab/mask.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace flowlab {

Mask Mask::constant(int h, int w, double v) {
    if (h <= 0 || w <= 0)
        throw std::invalid_argument("Mask::constant: dimensions must be positive");
    Mask m;
    m.h = h;
    m.w = w;
    m.values.assign(static_cast<size_t>(h) * w, v);
    return m;
}

namespace {

/// Base-mask config entry: inline values, a file reference, or a synthetic
/// shape (constant / disk / rect / union of entries).
Mask base_mask_from_json(const nlohmann::json& j) {
    if (j.contains("values"))
        return mask_from_json(j);
    if (j.contains("file"))
        return load_mask(j.at("file").get<std::string>());
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "constant")
        return Mask::constant(j.at("h").get<int>(), j.at("w").get<int>(), j.value("value", 0.0));
    if (kind == "disk")
        return disk_mask(j.at("h").get<int>(), j.at("w").get<int>(),
                         j.at("center_r").get<double>(), j.at("center_c").get<double>(),
                         j.at("radius").get<double>());
    if (kind == "rect")
        return rect_mask(j.at("h").get<int>(), j.at("w").get<int>(), j.at("r0").get<int>(),
                         j.at("c0").get<int>(), j.at("r1").get<int>(), j.at("c1").get<int>());
    if (kind == "union") {
        const auto& parts = j.at("of");
        if (!parts.is_array() || parts.empty())
            throw std::invalid_argument("union base mask needs a nonempty 'of' array");
        Mask acc = base_mask_from_json(parts[0]);
        for (size_t i = 1; i < parts.size(); ++i)
            acc = mask_union(acc, base_mask_from_json(parts[i]));
        return acc;
    }
    throw std::invalid_argument("unknown base mask kind '" + kind + "'");
}

}  // namespace

MaskConfig MaskConfig::from_json(const nlohmann::json& j) {
    MaskConfig cfg;
    cfg.q = j.value("q", cfg.q);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.kernel = j.value("kernel", cfg.kernel);
    if (j.contains("base"))
        cfg.base = base_mask_from_json(j.at("base"));
    if (cfg.q <= 0.5 || cfg.q > 1.0)
        throw std::invalid_argument("mask quantile q must lie in (0.5, 1]");
    if (cfg.tau <= 0.0)
        throw std::invalid_argument("mask sigmoid temperature must be > 0");
    if (cfg.kernel < 1 || cfg.kernel % 2 == 0)
        throw std::invalid_argument("mask kernel size must be odd and >= 1");
    return cfg;
}

nlohmann::json MaskConfig::to_json() const {
    return nlohmann::json{
        {"q", q}, {"tau", tau}, {"kernel", kernel}, {"base", mask_to_json(base)}};
}

Mask per_site_magnitude(const LatentState& delta_v) {
    if (delta_v.layout.kind != Layout::Kind::Grid)
        throw std::invalid_argument("per_site_magnitude: masking requires a grid layout");
    const int h = delta_v.layout.h, w = delta_v.layout.w, c = delta_v.layout.c;
    Mask m;
    m.h = h;
    m.w = w;
    m.values.resize(static_cast<size_t>(h) * w);
    for (int s = 0; s < h * w; ++s) {
        double acc = 0.0;
        const double* site = delta_v.values.data() + static_cast<size_t>(s) * c;
        for (int j = 0; j < c; ++j)
            acc += site[j] * site[j];
        m.values[s] = std::sqrt(acc);
    }
    return m;
}

double linear_quantile(std::vector<double> values, double p) {
    if (values.empty())
        throw std::invalid_argument("linear_quantile: empty input");
    if (p < 0.0 || p > 1.0)
        throw std::invalid_argument("linear_quantile: p outside [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = p * (values.size() - 1);
    const size_t lo = static_cast<size_t>(pos);
    if (lo + 1 >= values.size())
        return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

Mask quantile_normalize(const Mask& m, double q) {
    if (m.values.empty())
        throw std::invalid_argument("quantile_normalize: empty field");
    const double v_min = linear_quantile(m.values, 1.0 - q);
    const double v_max = linear_quantile(m.values, q);
    Mask out = m;
    if (v_max - v_min < 1e-12) {
        std::fill(out.values.begin(), out.values.end(), 0.5);
        return out;
    }
    const double inv = 1.0 / (v_max - v_min);
    for (double& v : out.values)
        v = (v - v_min) * inv;
    return out;
}

Mask sigmoid_contrast(const Mask& m, double tau) {
    if (tau <= 0.0)
        throw std::invalid_argument("sigmoid_contrast: tau must be > 0");
    Mask out = m;
    for (double& v : out.values)
        v = 1.0 / (1.0 + std::exp(-tau * (v - 0.5)));
    return out;
}

namespace {

template <typename Op>
Mask moving_window(const Mask& m, int k, Op op, double init) {
    const int r = k / 2;
    Mask out = m;
    for (int row = 0; row < m.h; ++row) {
        for (int col = 0; col < m.w; ++col) {
            double acc = init;
            for (int dr = -r; dr <= r; ++dr) {
                const int rr = std::clamp(row + dr, 0, m.h - 1);
                for (int dc = -r; dc <= r; ++dc) {
                    const int cc = std::clamp(col + dc, 0, m.w - 1);
                    acc = op(acc, m.at(rr, cc));
                }
            }
            out.at(row, col) = acc;
        }
    }
    return out;
}

}  // namespace

Mask grayscale_close(const Mask& m, int k) {
    if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("grayscale_close: kernel size must be odd and >= 1");
    if (k == 1)
        return m;
    Mask dilated = moving_window(
        m, k, [](double a, double b) { return std::max(a, b); },
        -std::numeric_limits<double>::infinity());
    return moving_window(
        dilated, k, [](double a, double b) { return std::min(a, b); },
        std::numeric_limits<double>::infinity());
}

Mask mask_refine(const LatentState& delta_v, const MaskConfig& cfg) {
    Mask magnitude = per_site_magnitude(delta_v);
    if (cfg.base.h != magnitude.h || cfg.base.w != magnitude.w)
        throw std::invalid_argument("mask_refine: base mask " + std::to_string(cfg.base.h) + "x" +
                                    std::to_string(cfg.base.w) + " does not match grid " +
                                    std::to_string(magnitude.h) + "x" +
                                    std::to_string(magnitude.w));
    Mask adaptive = sigmoid_contrast(quantile_normalize(magnitude, cfg.q), cfg.tau);
    for (int i = 0; i < adaptive.size(); ++i)
        adaptive.values[i] = std::max(adaptive.values[i], cfg.base.values[i]);
    Mask closed = grayscale_close(adaptive, cfg.kernel);
    for (double& v : closed.values)
        v = std::clamp(v, 0.0, 1.0);
    return closed;
}

Mask disk_mask(int h, int w, double center_r, double center_c, double radius) {
    Mask m = Mask::constant(h, w, 0.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (std::hypot(r - center_r, c - center_c) <= radius)
                m.at(r, c) = 1.0;
    return m;
}

Mask rect_mask(int h, int w, int r0, int c0, int r1, int c1) {
    Mask m = Mask::constant(h, w, 0.0);
    for (int r = std::max(0, r0); r <= std::min(h - 1, r1); ++r)
        for (int c = std::max(0, c0); c <= std::min(w - 1, c1); ++c)
            m.at(r, c) = 1.0;
    return m;
}

Mask mask_union(const Mask& a, const Mask& b) {
    if (a.h != b.h || a.w != b.w)
        throw std::invalid_argument("mask_union: shape mismatch");
    Mask out = a;
    for (int i = 0; i < out.size(); ++i)
        out.values[i] = std::max(a.values[i], b.values[i]);
    return out;
}

nlohmann::json mask_to_json(const Mask& m) {
    return nlohmann::json{{"h", m.h}, {"w", m.w}, {"values", m.values}};
}

Mask mask_from_json(const nlohmann::json& j) {
    Mask m;
    m.h = j.at("h").get<int>();
    m.w = j.at("w").get<int>();
    m.values = j.at("values").get<std::vector<double>>();
    if (m.h <= 0 || m.w <= 0 || static_cast<int>(m.values.size()) != m.h * m.w)
        throw std::invalid_argument("mask JSON shape mismatch");
    for (double v : m.values)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("mask values must lie in [0,1]");
    return m;
}

void save_mask(const Mask& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot open '" + path + "' for writing");
    out << mask_to_json(m).dump() << '\n';
}

Mask load_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open mask file '" + path + "'");
    nlohmann::json j;
    in >> j;
    return mask_from_json(j);
}

}  // namespace flowlab
