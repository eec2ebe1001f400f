#pragma once

#include <vector>

#include "flowlab/mask.hpp"
#include "flowlab/rng.hpp"

// Golden-test fixtures for the mask refinement pipeline. The stored outputs in
// tests/data were produced by exactly these inputs.
namespace flowlab::maskfix {

inline Mask union_fixture() {
    Rng rng(31);
    std::vector<double> dv(8 * 8 * 2);
    for (auto& v : dv)
        v = rng.normal();
    MaskConfig cfg;
    cfg.base = Mask::constant(8, 8, 1.0);
    cfg.kernel = 3;
    return mask_refine(LatentState::grid(8, 8, 2, dv), cfg);
}

inline Mask degenerate_fixture() {
    MaskConfig cfg;
    cfg.base = Mask::constant(6, 6, 0.0);
    cfg.kernel = 5;
    return mask_refine(LatentState::grid(6, 6, 2, std::vector<double>(72, 0.0)), cfg);
}

inline LatentState disk_fixture_delta() {
    const int h = 16, w = 16, ch = 2;
    std::vector<double> dv(h * w * ch);
    for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
            const size_t i = (static_cast<size_t>(r) * w + col) * ch;
            dv[i] = 0.002 * (r + col);  // faint background gradient
            dv[i + 1] = 0.0;
            if (r >= 2 && r <= 4 && col >= 10 && col <= 12) {
                dv[i] = 3.0;
                dv[i + 1] = 4.0;
            }
        }
    return LatentState::grid(h, w, ch, dv);
}

inline MaskConfig disk_fixture_config() {
    MaskConfig cfg;
    cfg.base = disk_mask(16, 16, 10.0, 4.0, 3.0);
    cfg.kernel = 3;
    return cfg;
}

inline Mask disk_fixture() {
    return mask_refine(disk_fixture_delta(), disk_fixture_config());
}

}  // namespace flowlab::maskfix
