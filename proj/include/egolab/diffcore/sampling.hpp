#pragma once

#include "egolab/diffcore/tensor.hpp"

namespace egolab::diff {

struct Sampled {
    Tensor values;  // [N,C,H',W']
    Mask valid;     // [N,H',W']; false where the sample point left the image
};

/// Bilinear lookup of `image` [N,C,H,W] at continuous pixel coordinates
/// `grid` [N,H',W',2] holding (u, v) = (column, row). Points outside
/// [0,W-1] x [0,H-1] take the value at the clamped coordinate and are
/// reported invalid; the gradient w.r.t. a clamped coordinate is zero.
inline Sampled bilinear_sample(const Tensor& image, const Tensor& grid) {
    if (image.rank() != 4 || grid.rank() != 4 || grid.dim(3) != 2 || grid.dim(0) != image.dim(0)) {
        throw ShapeError("bilinear_sample: image " + shape_str(image.shape()) + ", grid " + shape_str(grid.shape()));
    }
    const std::size_t n = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
    const std::size_t ho = grid.dim(1), wo = grid.dim(2);
    const std::size_t npix = ho * wo;

    struct Tap {
        std::size_t x0, x1, y0, y1;
        Real fx, fy;
        bool u_free, v_free;  // coordinate not clamped
    };
    std::vector<Tap> taps(n * npix);
    Mask valid({n, ho, wo}, true);
    const auto& gd = grid.data();
    for (std::size_t i = 0; i < n * npix; ++i) {
        const Real u = gd[2 * i], v = gd[2 * i + 1];
        const Real umax = Real(w - 1), vmax = Real(h - 1);
        // Round-off from the projection chain must not invalidate border pixels.
        constexpr Real tol = 1e-9;
        const bool u_in = u >= -tol && u <= umax + tol, v_in = v >= -tol && v <= vmax + tol;
        valid.bits[i] = (u_in && v_in) ? 1 : 0;
        const Real uc = std::clamp(u, Real{0}, umax), vc = std::clamp(v, Real{0}, vmax);
        Tap t;
        t.x0 = std::min(std::size_t(uc), w - 1);
        t.y0 = std::min(std::size_t(vc), h - 1);
        t.x1 = std::min(t.x0 + 1, w - 1);
        t.y1 = std::min(t.y0 + 1, h - 1);
        t.fx = uc - Real(t.x0);
        t.fy = vc - Real(t.y0);
        t.u_free = u_in;
        t.v_free = v_in;
        taps[i] = t;
    }

    std::vector<Real> out(n * c * npix);
    const auto& img = image.data();
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            const Real* plane = img.data() + (b * c + ch) * h * w;
            Real* dst = out.data() + (b * c + ch) * npix;
            for (std::size_t p = 0; p < npix; ++p) {
                const Tap& t = taps[b * npix + p];
                const Real top = plane[t.y0 * w + t.x0] * (1 - t.fx) + plane[t.y0 * w + t.x1] * t.fx;
                const Real bot = plane[t.y1 * w + t.x0] * (1 - t.fx) + plane[t.y1 * w + t.x1] * t.fx;
                dst[p] = top * (1 - t.fy) + bot * t.fy;
            }
        }
    }

    Tensor values = Tensor::make_result({n, c, ho, wo}, std::move(out), {image, grid},
        [image, taps = std::move(taps), n, c, h, w, npix](detail::Node& node) {
            Real* gimg = Tensor::parent_grad(node, 0);
            Real* ggrid = Tensor::parent_grad(node, 1);
            const auto& img = image.data();
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const std::size_t plane_off = (b * c + ch) * h * w;
                    const Real* plane = img.data() + plane_off;
                    const Real* g = node.grad.data() + (b * c + ch) * npix;
                    for (std::size_t p = 0; p < npix; ++p) {
                        const Tap& t = taps[b * npix + p];
                        if (gimg) {
                            Real* gp = gimg + plane_off;
                            gp[t.y0 * w + t.x0] += g[p] * (1 - t.fx) * (1 - t.fy);
                            gp[t.y0 * w + t.x1] += g[p] * t.fx * (1 - t.fy);
                            gp[t.y1 * w + t.x0] += g[p] * (1 - t.fx) * t.fy;
                            gp[t.y1 * w + t.x1] += g[p] * t.fx * t.fy;
                        }
                        if (ggrid) {
                            const Real a = plane[t.y0 * w + t.x0], bb = plane[t.y0 * w + t.x1];
                            const Real cc = plane[t.y1 * w + t.x0], d = plane[t.y1 * w + t.x1];
                            const std::size_t gi = 2 * (b * npix + p);
                            if (t.u_free) ggrid[gi] += g[p] * ((bb - a) * (1 - t.fy) + (d - cc) * t.fy);
                            if (t.v_free) ggrid[gi + 1] += g[p] * ((cc - a) * (1 - t.fx) + (d - bb) * t.fx);
                        }
                    }
                }
            }
        },
        "bilinear_sample");
    return {std::move(values), std::move(valid)};
}

namespace detail {

// Half-pixel-centre resampling weights along one axis.
struct AxisTaps {
    std::vector<std::size_t> i0, i1;
    std::vector<Real> f;
};

inline AxisTaps resize_taps(std::size_t in, std::size_t out) {
    AxisTaps t;
    const Real scale = Real(in) / Real(out);
    for (std::size_t o = 0; o < out; ++o) {
        Real src = (Real(o) + Real{0.5}) * scale - Real{0.5};
        src = std::clamp(src, Real{0}, Real(in - 1));
        const std::size_t lo = std::min(std::size_t(src), in - 1);
        t.i0.push_back(lo);
        t.i1.push_back(std::min(lo + 1, in - 1));
        t.f.push_back(src - Real(lo));
    }
    return t;
}

}  // namespace detail

/// Bilinear resize of [N,C,H,W] to [N,C,out_h,out_w] (pixel centres aligned).
inline Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) throw ShapeError("resize_bilinear expects NCHW");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h == out_h && w == out_w) return x;
    const auto ty = detail::resize_taps(h, out_h), tx = detail::resize_taps(w, out_w);
    std::vector<Real> out(planes * out_h * out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        const Real* src = x.data().data() + p * h * w;
        Real* dst = out.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const Real fy = ty.f[oy], fx = tx.f[ox];
                const Real top = src[ty.i0[oy] * w + tx.i0[ox]] * (1 - fx) + src[ty.i0[oy] * w + tx.i1[ox]] * fx;
                const Real bot = src[ty.i1[oy] * w + tx.i0[ox]] * (1 - fx) + src[ty.i1[oy] * w + tx.i1[ox]] * fx;
                dst[oy * out_w + ox] = top * (1 - fy) + bot * fy;
            }
        }
    }
    return Tensor::make_result({x.dim(0), x.dim(1), out_h, out_w}, std::move(out), {x},
        [ty, tx, planes, h, w, out_h, out_w](detail::Node& n) {
            Real* gx = Tensor::parent_grad(n, 0);
            for (std::size_t p = 0; p < planes; ++p) {
                Real* dst = gx + p * h * w;
                const Real* g = n.grad.data() + p * out_h * out_w;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const Real fy = ty.f[oy], fx = tx.f[ox], v = g[oy * out_w + ox];
                        dst[ty.i0[oy] * w + tx.i0[ox]] += v * (1 - fx) * (1 - fy);
                        dst[ty.i0[oy] * w + tx.i1[ox]] += v * fx * (1 - fy);
                        dst[ty.i1[oy] * w + tx.i0[ox]] += v * (1 - fx) * fy;
                        dst[ty.i1[oy] * w + tx.i1[ox]] += v * fx * fy;
                    }
                }
            }
        },
        "resize_bilinear");
}

/// Uniform window mean with mirror (reflect, edge not repeated) padding.
/// window must be odd and at most 2*min(H,W)-1.
inline Tensor box_filter(const Tensor& x, std::size_t window) {
    if (x.rank() != 4) throw ShapeError("box_filter expects NCHW");
    if (window % 2 == 0) throw ShapeError("box_filter window must be odd");
    const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const long r = long(window / 2);
    if (r > 0 && (long(h) <= r || long(w) <= r)) throw ShapeError("box_filter window too large for image");
    auto reflect = [](long i, long n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * (n - 1) - i;
        return i;
    };
    std::vector<std::size_t> ry, rx;
    for (long i = -r; i < long(h) + r; ++i) ry.push_back(std::size_t(reflect(i, long(h))));
    for (long i = -r; i < long(w) + r; ++i) rx.push_back(std::size_t(reflect(i, long(w))));
    const Real norm = Real{1} / Real(window * window);

    std::vector<Real> out(x.size());
    for (std::size_t p = 0; p < planes; ++p) {
        const Real* src = x.data().data() + p * h * w;
        Real* dst = out.data() + p * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t xx = 0; xx < w; ++xx) {
                Real acc = 0;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    const std::size_t sy = ry[y + dy];
                    for (std::size_t dx = 0; dx < window; ++dx) acc += src[sy * w + rx[xx + dx]];
                }
                dst[y * w + xx] = acc * norm;
            }
        }
    }
    return Tensor::make_result(x.shape(), std::move(out), {x},
        [ry, rx, planes, h, w, window, norm](detail::Node& n) {
            Real* gx = Tensor::parent_grad(n, 0);
            for (std::size_t p = 0; p < planes; ++p) {
                Real* dst = gx + p * h * w;
                const Real* g = n.grad.data() + p * h * w;
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t xx = 0; xx < w; ++xx) {
                        const Real v = g[y * w + xx] * norm;
                        for (std::size_t dy = 0; dy < window; ++dy) {
                            const std::size_t sy = ry[y + dy];
                            for (std::size_t dx = 0; dx < window; ++dx) dst[sy * w + rx[xx + dx]] += v;
                        }
                    }
                }
            }
        },
        "box_filter");
}

}  // namespace egolab::diff
