#pragma once

#include <nlohmann/json.hpp>

#include "egolab/diffcore/config_keys.hpp"

#include "egolab/diffcore/ops.hpp"
#include "egolab/diffcore/sampling.hpp"

namespace egolab::loss {

using diff::Mask;
using diff::Tensor;

struct SsimParams {
    double c1 = 1e-4;
    double c2 = 9e-4;
    std::size_t window = 3;

    void validate() const {
        if (!(c1 > 0 && c2 > 0)) throw Error("SSIM constants must be positive");
        if (window == 0 || window % 2 == 0) throw Error("SSIM window must be odd and >= 1");
    }
};

struct LossWeights {
    double alpha = 0.85;   // SSIM share of the photometric term
    double lambda = 0.1;   // smoothness weight

    void validate() const {
        if (!(alpha >= 0 && alpha <= 1)) throw Error("alpha must lie in [0, 1]");
        if (!(lambda >= 0)) throw Error("lambda must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const SsimParams& p) { j = {{"c1", p.c1}, {"c2", p.c2}, {"window", p.window}}; }
inline void from_json(const nlohmann::json& j, SsimParams& p) {
    check_keys(j, {"c1", "c2", "window"}, "ssim");
    p.c1 = j.value("c1", p.c1);
    p.c2 = j.value("c2", p.c2);
    p.window = j.value("window", p.window);
    p.validate();
}
inline void to_json(nlohmann::json& j, const LossWeights& w) { j = {{"alpha", w.alpha}, {"lambda", w.lambda}}; }
inline void from_json(const nlohmann::json& j, LossWeights& w) {
    check_keys(j, {"alpha", "lambda"}, "loss");
    w.alpha = j.value("alpha", w.alpha);
    w.lambda = j.value("lambda", w.lambda);
    w.validate();
}

/// Per-pixel, per-channel SSIM with uniform-window local statistics.
inline Tensor ssim_map(const Tensor& x, const Tensor& y, const SsimParams& p = {}) {
    if (x.shape() != y.shape()) throw ShapeError("ssim_map: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    p.validate();
    using diff::box_filter;
    const Tensor mu_x = box_filter(x, p.window);
    const Tensor mu_y = box_filter(y, p.window);
    const Tensor mu_xx = diff::square(mu_x);
    const Tensor mu_yy = diff::square(mu_y);
    const Tensor mu_xy = mu_x * mu_y;
    const Tensor var_x = box_filter(diff::square(x), p.window) - mu_xx;
    const Tensor var_y = box_filter(diff::square(y), p.window) - mu_yy;
    const Tensor cov = box_filter(x * y, p.window) - mu_xy;
    const Tensor num = diff::affine(mu_xy, 2, p.c1) * diff::affine(cov, 2, p.c2);
    const Tensor den = (mu_xx + mu_yy + p.c1) * (var_x + var_y + p.c2);
    return num / den;
}

namespace detail {
inline Tensor channel_mean(const Tensor& a) { return diff::reduce(diff::Reduce::mean, a, {1}, true); }
}  // namespace detail

/// alpha * (1 - SSIM)/2 + (1 - alpha) * |a - b|, both terms averaged over
/// channels. Returns [N,1,H,W].
inline Tensor photometric_loss(const Tensor& target, const Tensor& synth, const LossWeights& w = {}, const SsimParams& p = {}) {
    if (target.shape() != synth.shape()) throw ShapeError("photometric_loss: shape mismatch");
    w.validate();
    const Tensor l1 = detail::channel_mean(diff::abs(target - synth));
    if (w.alpha == 0) return l1;
    const Tensor dssim = diff::clamp(diff::affine(ssim_map(target, synth, p), -0.5, 0.5), 0, 1);
    return detail::channel_mean(dssim) * w.alpha + l1 * (1 - w.alpha);
}

/// True where the synthesized view explains the target strictly better than
/// the raw source frame. Returns [N,H,W].
inline Mask auto_mask(const Tensor& target, const Tensor& source, const Tensor& synth, const LossWeights& w = {},
                      const SsimParams& p = {}) {
    const Tensor raw = photometric_loss(target.detach(), source.detach(), w, p);
    const Tensor warped = photometric_loss(target.detach(), synth.detach(), w, p);
    Mask m({target.dim(0), target.dim(2), target.dim(3)}, false);
    for (std::size_t i = 0; i < m.size(); ++i) m.bits[i] = warped[i] < raw[i] ? 1 : 0;
    return m;
}

/// sum(x over mask) / count(mask) for x [N,1,H,W] and mask [N,H,W]; zero
/// (still attached to the graph) when the mask is empty.
inline Tensor masked_mean(const Tensor& x, const Mask& m) {
    if (x.size() != m.size()) throw ShapeError("masked_mean: mask size mismatch");
    Mask shaped = m;
    shaped.shape = x.shape();
    const std::size_t n = m.count();
    const Tensor s = diff::sum(x * shaped.as_tensor());
    return n == 0 ? s : s * (1.0 / double(n));
}

/// Edge-aware first-order smoothness of mean-normalised depth [N,1,H,W]
/// against image [N,C,H,W]: mean |dx D| e^{-|dx I|} + mean |dy D| e^{-|dy I|}.
inline Tensor smoothness_loss(const Tensor& depth, const Tensor& image) {
    if (depth.rank() != 4 || depth.dim(1) != 1 || image.rank() != 4 || depth.dim(0) != image.dim(0) ||
        depth.dim(2) != image.dim(2) || depth.dim(3) != image.dim(3)) {
        throw ShapeError("smoothness_loss: depth " + shape_str(depth.shape()) + " vs image " + shape_str(image.shape()));
    }
    const std::size_t h = depth.dim(2), w = depth.dim(3);
    const Tensor norm = depth / diff::reduce(diff::Reduce::mean, depth, {2, 3}, true);
    const Tensor img = image.detach();
    Tensor total = Tensor::zeros({1});
    if (w > 1) {
        const Tensor dd = diff::abs(diff::slice(norm, 3, 1, w - 1) - diff::slice(norm, 3, 0, w - 1));
        const Tensor di = detail::channel_mean(diff::abs(diff::slice(img, 3, 1, w - 1) - diff::slice(img, 3, 0, w - 1)));
        total = total + diff::mean(dd * diff::exp(-di));
    }
    if (h > 1) {
        const Tensor dd = diff::abs(diff::slice(norm, 2, 1, h - 1) - diff::slice(norm, 2, 0, h - 1));
        const Tensor di = detail::channel_mean(diff::abs(diff::slice(img, 2, 1, h - 1) - diff::slice(img, 2, 0, h - 1)));
        total = total + diff::mean(dd * diff::exp(-di));
    }
    return total;
}

}  // namespace egolab::loss
