#pragma once

#include <array>

#include "egolab/geometry/warp.hpp"
#include "egolab/losses/photometric.hpp"

namespace egolab::loss {

/// Per-pixel loss assigned to sources whose warp left the image; larger than
/// any photometric value so the min never picks them while another source
/// is valid.
inline constexpr double kInvalidLoss = 1e3;

struct RobustLoss {
    Tensor per_pixel;  // [N,1,H,W] min over sources
    Mask mask;         // [N,H,W] auto-mask, OR over sources
    Mask valid;        // [N,H,W] at least one source warp is valid
    std::vector<std::uint8_t> selected;  // winning source per pixel
    std::uint64_t branch_key = 0;        // fingerprint of every discrete decision

    Mask kept() const { return mask & valid; }
    Tensor reduced() const { return masked_mean(per_pixel, kept()); }
};

namespace detail {

inline void mix(std::uint64_t& h, std::uint64_t v) { h = (h ^ v) * 1099511628211ull; }

inline Tensor sources_stacked(const std::vector<Tensor>& per_source) {
    return per_source.size() == 1 ? per_source[0] : diff::concat(per_source, 1);
}

}  // namespace detail

/// Robust appearance loss of `target` against every source frame: each
/// source is warped through `depth` and its pose (target-to-source, [N,6] or [N,12]),
/// per-pixel photometric maps are reduced by min over sources, and the
/// auto-mask keeps pixels where some warp beats its raw source.
/// `raw_losses`, when given, are the precomputed photometric maps of
/// (target, source) used by the auto-mask.
inline RobustLoss robust_loss(const Tensor& target, const std::vector<Tensor>& sources, const Tensor& depth,
                              const std::vector<Tensor>& poses, const geom::CameraIntrinsics& K, const LossWeights& w = {},
                              const SsimParams& p = {}, const std::vector<Tensor>* raw_losses = nullptr) {
    if (sources.empty()) throw Error("robust_loss: at least one source frame is required");
    if (poses.size() != sources.size()) throw Error("robust_loss: one pose per source frame is required");
    const std::size_t n = target.dim(0), h = target.dim(2), wd = target.dim(3);
    const Shape mshape{n, h, wd};

    std::vector<Tensor> per_source;
    RobustLoss out;
    out.mask = Mask(mshape, false);
    out.valid = Mask(mshape, false);
    std::uint64_t key = 1469598103934665603ull;
    const Tensor invalid = Tensor::full({n, 1, h, wd}, kInvalidLoss);
    for (std::size_t s = 0; s < sources.size(); ++s) {
        auto view = geom::synthesize_view(sources[s], depth, poses[s], K);
        const Tensor lp = photometric_loss(target, view.image, w, p);
        const Tensor raw = raw_losses ? (*raw_losses)[s] : photometric_loss(target.detach(), sources[s].detach(), w, p);
        Mask better(mshape, false);
        for (std::size_t i = 0; i < better.size(); ++i) better.bits[i] = lp[i] < raw[i] ? 1 : 0;
        out.mask = out.mask | (better & view.valid);
        out.valid = out.valid | view.valid;
        Mask v4 = view.valid;
        v4.shape = {n, 1, h, wd};
        per_source.push_back(diff::where(v4, lp, invalid));

        for (auto b : view.valid.bits) detail::mix(key, b);
        for (auto b : better.bits) detail::mix(key, b);
        for (Real c : view.grid.data()) detail::mix(key, std::uint64_t(std::int64_t(std::floor(c))));
        for (std::size_t i = 0; i < target.size(); ++i) {
            detail::mix(key, target[i] < view.image[i] ? 1 : 0);
        }
    }
    const Tensor stacked = detail::sources_stacked(per_source);
    out.per_pixel = diff::reduce(diff::Reduce::min, stacked, {1}, true);
    out.selected.assign(n * h * wd, 0);
    const std::size_t plane = h * wd;
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t i = 0; i < plane; ++i) {
            std::size_t best = 0;
            for (std::size_t s = 1; s < sources.size(); ++s) {
                if (stacked[(b * sources.size() + s) * plane + i] < stacked[(b * sources.size() + best) * plane + i]) best = s;
            }
            out.selected[b * plane + i] = std::uint8_t(best);
            detail::mix(key, best);
        }
    }
    out.branch_key = key;
    return out;
}

/// Output of the full objective. `total` carries the graph; the rest are
/// plain diagnostics. masked_fraction is the share of pixels excluded from
/// the photometric average (auto-mask or invalid warp), averaged over scales.
struct LossBreakdown {
    Tensor total;
    double photometric = 0;
    double smoothness = 0;
    double masked_fraction = 0;
    std::array<double, 4> per_scale{};
    std::uint64_t branch_key = 0;

    double value() const { return total.item(); }
};

struct LossInputs {
    Tensor target;                 // [N,C,H,W]
    std::vector<Tensor> sources;   // each [N,C,H,W]
    std::vector<Tensor> poses;     // each [N,6] or [N,12], target-to-source
    geom::CameraIntrinsics K;      // at target resolution
};

/// Multi-scale objective: every depth scale is upsampled to the input
/// resolution, scored with the masked robust photometric loss plus
/// lambda * smoothness, and the scales are averaged with equal weight.
inline LossBreakdown total_loss(const LossInputs& in, const std::vector<Tensor>& depth_pyramid, const LossWeights& w = {},
                                const SsimParams& p = {}) {
    if (depth_pyramid.size() != 4) throw Error("total_loss: expected 4 depth scales");
    const std::size_t h = in.target.dim(2), wd = in.target.dim(3);
    for (std::size_t s = 0; s < 4; ++s) {
        const auto& d = depth_pyramid[s];
        if (d.rank() != 4 || d.dim(2) != h >> s || d.dim(3) != wd >> s) {
            throw ShapeError("total_loss: depth scale " + std::to_string(s) + " has shape " + shape_str(d.shape()));
        }
    }
    std::vector<Tensor> raw;
    for (const auto& src : in.sources) raw.push_back(photometric_loss(in.target.detach(), src.detach(), w, p));

    LossBreakdown out;
    std::vector<Tensor> scale_losses;
    std::uint64_t key = 0;
    for (std::size_t s = 0; s < 4; ++s) {
        const Tensor depth = diff::resize_bilinear(depth_pyramid[s], h, wd);
        const RobustLoss robust = robust_loss(in.target, in.sources, depth, in.poses, in.K, w, p, &raw);
        const Tensor photo = robust.reduced();
        const Tensor smooth = smoothness_loss(depth, in.target);
        const Tensor scale_total = w.lambda == 0 ? photo : photo + smooth * w.lambda;
        out.photometric += photo.item() / 4;
        out.smoothness += smooth.item() / 4;
        out.masked_fraction += (1 - robust.kept().fraction()) / 4;
        out.per_scale[s] = scale_total.item();
        detail::mix(key, robust.branch_key);
        // |dD| kinks of the smoothness term
        for (std::size_t i = 0; i + 1 < depth.size(); ++i) {
            detail::mix(key, depth[i + 1] < depth[i] ? 1 : 0);
            if (i + wd < depth.size()) detail::mix(key, depth[i + wd] < depth[i] ? 1 : 0);
        }
        scale_losses.push_back(scale_total);
    }
    out.total = diff::mean(diff::concat(scale_losses, 0));
    out.branch_key = key;
    return out;
}

}  // namespace egolab::loss
