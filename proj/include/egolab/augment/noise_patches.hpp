#pragma once

// Sparsity-inducing augmentation: random square noise patches over the
// pose-network inputs.

#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "egolab/diffcore/config_keys.hpp"

#include "egolab/diffcore/tensor.hpp"

namespace egolab::aug {

using diff::Mask;
using diff::Tensor;

struct AugmentPolicy {
    double coverage = 0.0;        // target fraction of obfuscated pixels
    std::size_t patch_side = 21;  // pixels
    bool apply_to_depth = true;
    bool enabled = false;

    void validate() const {
        if (!(coverage >= 0 && coverage <= 0.95)) throw Error("augment: coverage must lie in [0, 0.95]");
        if (patch_side == 0) throw Error("augment: patch_side must be >= 1");
    }
    void validate(std::size_t h, std::size_t w) const {
        validate();
        if (patch_side > std::min(h, w)) {
            throw Error("augment: patch_side " + std::to_string(patch_side) + " exceeds image side " + std::to_string(std::min(h, w)));
        }
    }
    bool active() const { return enabled && coverage > 0; }
};

inline void to_json(nlohmann::json& j, const AugmentPolicy& p) {
    j = {{"coverage", p.coverage}, {"patch_side", p.patch_side}, {"apply_to_depth", p.apply_to_depth}, {"enabled", p.enabled}};
}
inline void from_json(const nlohmann::json& j, AugmentPolicy& p) {
    check_keys(j, {"coverage", "patch_side", "apply_to_depth", "enabled"}, "augment");
    p.coverage = j.value("coverage", p.coverage);
    p.patch_side = j.value("patch_side", p.patch_side);
    p.apply_to_depth = j.value("apply_to_depth", p.apply_to_depth);
    p.enabled = j.value("enabled", p.coverage > 0);
    p.validate();
}

struct ObfuscationMask {
    Mask mask;  // [H,W]
    double achieved_coverage = 0;
    std::size_t patches = 0;
};

/// Drops square patches at uniformly random positions (any placement that
/// overlaps the image, clipped at the borders) until the union first covers
/// at least `coverage` of the image.
template <class Rng>
ObfuscationMask sample_mask(const AugmentPolicy& p, Rng& rng, std::size_t h, std::size_t w) {
    p.validate(h, w);
    ObfuscationMask out{Mask({h, w}, false), 0, 0};
    if (!p.active()) return out;
    const long side = long(p.patch_side);
    std::uniform_int_distribution<long> ys(1 - side, long(h) - 1), xs(1 - side, long(w) - 1);
    const std::size_t need = std::size_t(std::ceil(p.coverage * double(h * w) - 1e-9));
    std::size_t covered = 0;
    while (covered < need) {
        const long y0 = ys(rng), x0 = xs(rng);
        for (long y = std::max(0L, y0); y < std::min(long(h), y0 + side); ++y) {
            for (long x = std::max(0L, x0); x < std::min(long(w), x0 + side); ++x) {
                auto& b = out.mask.bits[std::size_t(y) * w + std::size_t(x)];
                if (!b) {
                    b = 1;
                    ++covered;
                }
            }
        }
        ++out.patches;
    }
    out.achieved_coverage = double(covered) / double(h * w);
    return out;
}

struct Obfuscated {
    Tensor image;
    std::optional<Tensor> depth;
};

/// Replaces masked pixels of one frame: RGB [1,C,H,W] by uniform [0,1]
/// noise per channel and, when requested, the (normalised) depth [1,1,H,W]
/// by uniform noise within that frame's depth range. The same mask covers
/// both. Unmasked values are copied bit for bit; outputs carry no graph.
template <class Rng>
Obfuscated apply_obfuscation(const Tensor& image, const std::optional<Tensor>& depth, const ObfuscationMask& m, Rng& rng,
                             bool apply_to_depth = true) {
    if (image.rank() != 4 || image.dim(0) != 1) throw ShapeError("apply_obfuscation expects one frame [1,C,H,W]");
    const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3), n = h * w;
    if (m.mask.shape != Shape{h, w}) throw ShapeError("apply_obfuscation: mask does not match frame size");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Real> img = image.data();
    for (std::size_t i = 0; i < n; ++i) {
        if (!m.mask.bits[i]) continue;
        for (std::size_t ch = 0; ch < c; ++ch) img[ch * n + i] = unit(rng);
    }
    Obfuscated out{Tensor(image.shape(), std::move(img)), std::nullopt};
    if (depth) {
        if (depth->shape() != Shape{1, 1, h, w}) throw ShapeError("apply_obfuscation: depth must be [1,1,H,W]");
        std::vector<Real> d = depth->data();
        if (apply_to_depth) {
            const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
            const double lo = *lo_it, hi = *hi_it;
            std::uniform_real_distribution<double> range(lo, hi);
            for (std::size_t i = 0; i < n; ++i) {
                if (m.mask.bits[i]) d[i] = lo == hi ? lo : range(rng);
            }
        }
        out.depth = Tensor(depth->shape(), std::move(d));
    }
    return out;
}

}  // namespace egolab::aug
