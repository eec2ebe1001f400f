#pragma once

#include <string>
#include <vector>

#include "flowlab/core.hpp"
#include "json.hpp"

namespace flowlab {

/// One value per spatial site, row-major. Finished masks live in [0,1];
/// quantile_normalize intentionally emits values outside that range (the
/// sigmoid saturates the extremes).
struct Mask {
    int h = 0, w = 0;
    std::vector<double> values;

    static Mask constant(int h, int w, double v);

    double at(int r, int c) const { return values[static_cast<size_t>(r) * w + c]; }
    double& at(int r, int c) { return values[static_cast<size_t>(r) * w + c]; }
    int size() const { return h * w; }
};

struct MaskConfig {
    double q = 0.95;   // quantile ratio in (0.5, 1]
    double tau = 15.0; // sigmoid temperature > 0
    int kernel = 5;    // odd closing kernel size >= 1
    Mask base;

    static MaskConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

/// Per-site l2 magnitude over channels; grid layouts only.
Mask per_site_magnitude(const LatentState& delta_v);

/// Linear-interpolation quantile of the values (p in [0,1]).
double linear_quantile(std::vector<double> values, double p);

/// (m - quantile(1-q)) / (quantile(q) - quantile(1-q)); a degenerate range
/// (< 1e-12) maps everything to 0.5. Output is not clipped.
Mask quantile_normalize(const Mask& m, double q);

/// sigmoid(tau * (m - 0.5)) elementwise.
Mask sigmoid_contrast(const Mask& m, double tau);

/// Grayscale closing: k x k moving maximum then k x k moving minimum, both
/// with edge-replicate padding.
Mask grayscale_close(const Mask& m, int k);

/// Full refinement pipeline: magnitude -> quantile normalize -> sigmoid ->
/// union with the base mask -> closing; result clamped to [0,1].
Mask mask_refine(const LatentState& delta_v, const MaskConfig& cfg);

// Synthetic base masks (segmentation stand-ins) and mask file I/O.
Mask disk_mask(int h, int w, double center_r, double center_c, double radius);
Mask rect_mask(int h, int w, int r0, int c0, int r1, int c1);
Mask mask_union(const Mask& a, const Mask& b);

nlohmann::json mask_to_json(const Mask& m);
Mask mask_from_json(const nlohmann::json& j);
void save_mask(const Mask& m, const std::string& path);
Mask load_mask(const std::string& path);

}  // namespace flowlab
