#pragma once

#include "egolab/diffcore/sampling.hpp"
#include "egolab/geometry/camera.hpp"
#include "egolab/geometry/pose.hpp"

namespace egolab::geom {

/// Transformed points closer than this to the source image plane are
/// treated as behind the camera.
inline constexpr double kMinProjectedDepth = 1e-6;

struct ProjectedGrid {
    diff::Tensor grid;  // [N,H,W,2] source pixel coordinates (u, v)
    diff::Mask in_front;  // [N,H,W] transformed depth > 0
};

/// Maps every target pixel p with depth D(p) to the source image:
///   u_s ~ K (R * D(p) K^-1 [p;1] + t).
/// `transform` holds [R | t] row-major ([N,12], see pose_matrix).
inline ProjectedGrid project_grid(const diff::Tensor& depth, const diff::Tensor& transform, const CameraIntrinsics& K) {
    if (depth.rank() != 4 || depth.dim(1) != 1) throw ShapeError("project_grid expects depth [N,1,H,W]");
    if (transform.rank() != 2 || transform.dim(1) != 12 || transform.dim(0) != depth.dim(0)) {
        throw ShapeError("project_grid expects transform [N,12]");
    }
    const std::size_t n = depth.dim(0), h = depth.dim(2), w = depth.dim(3);
    if (h != K.height || w != K.width) throw ShapeError("project_grid: depth size does not match intrinsics");
    for (Real d : depth.data()) {
        if (!(d > 0)) throw Error("project_grid: depth must be positive everywhere");
    }
    const std::size_t npix = h * w;
    std::vector<Real> out(n * npix * 2);
    diff::Mask front({n, h, w}, true);
    const auto& dd = depth.data();
    const auto& tf = transform.data();
    for (std::size_t b = 0; b < n; ++b) {
        const Real* T = tf.data() + 12 * b;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t i = b * npix + y * w + x;
                const Real rx = (Real(x) - K.cx) / K.fx, ry = (Real(y) - K.cy) / K.fy;
                const Real d = dd[i];
                const Real X = d * rx, Y = d * ry, Z = d;
                const Real P0 = T[0] * X + T[1] * Y + T[2] * Z + T[9];
                const Real P1 = T[3] * X + T[4] * Y + T[5] * Z + T[10];
                const Real P2 = T[6] * X + T[7] * Y + T[8] * Z + T[11];
                if (P2 > kMinProjectedDepth) {
                    out[2 * i] = K.fx * P0 / P2 + K.cx;
                    out[2 * i + 1] = K.fy * P1 / P2 + K.cy;
                } else {
                    front.bits[i] = 0;
                    out[2 * i] = -1;
                    out[2 * i + 1] = -1;
                }
            }
        }
    }
    diff::Tensor grid = diff::Tensor::make_result({n, h, w, 2}, std::move(out), {depth, transform},
        [depth, transform, front, K, n, h, w, npix](diff::detail::Node& node) {
            Real* gd = diff::Tensor::parent_grad(node, 0);
            Real* gt = diff::Tensor::parent_grad(node, 1);
            const auto& dd = depth.data();
            const auto& tf = transform.data();
            for (std::size_t b = 0; b < n; ++b) {
                const Real* T = tf.data() + 12 * b;
                for (std::size_t y = 0; y < h; ++y) {
                    for (std::size_t x = 0; x < w; ++x) {
                        const std::size_t i = b * npix + y * w + x;
                        if (!front[i]) continue;
                        const Real gu = node.grad[2 * i], gv = node.grad[2 * i + 1];
                        const Real r[3] = {(Real(x) - K.cx) / K.fx, (Real(y) - K.cy) / K.fy, 1};
                        const Real d = dd[i];
                        const Real X[3] = {d * r[0], d * r[1], d};
                        const Real P0 = T[0] * X[0] + T[1] * X[1] + T[2] * X[2] + T[9];
                        const Real P1 = T[3] * X[0] + T[4] * X[1] + T[5] * X[2] + T[10];
                        const Real P2 = T[6] * X[0] + T[7] * X[1] + T[8] * X[2] + T[11];
                        // dL/dP via u = fx P0/P2 + cx, v = fy P1/P2 + cy
                        const Real inv = 1 / P2;
                        const Real dP[3] = {gu * K.fx * inv, gv * K.fy * inv,
                                            -(gu * K.fx * P0 + gv * K.fy * P1) * inv * inv};
                        if (gt) {
                            Real* g = gt + 12 * b;
                            for (int row = 0; row < 3; ++row) {
                                for (int col = 0; col < 3; ++col) g[3 * row + col] += dP[row] * X[col];
                                g[9 + row] += dP[row];
                            }
                        }
                        if (gd) {
                            Real acc = 0;
                            for (int row = 0; row < 3; ++row) {
                                acc += dP[row] * (T[3 * row] * r[0] + T[3 * row + 1] * r[1] + T[3 * row + 2] * r[2]);
                            }
                            gd[i] += acc;
                        }
                    }
                }
            }
        },
        "project_grid");
    return {std::move(grid), std::move(front)};
}

struct SynthesizedView {
    diff::Tensor image;  // [N,C,H,W]
    diff::Mask valid;    // [N,H,W] in-bounds and in front of the source camera
    diff::Tensor grid;   // [N,H,W,2] source sample coordinates
};

/// Reconstructs the target view by sampling `source` [N,C,H,W] through the
/// target depth [N,1,H,W] and the target-to-source motion `pose`, either
/// Euler parameters [N,6] or [R | t] entries [N,12], mapping target-camera
/// points into the source camera.
inline SynthesizedView synthesize_view(const diff::Tensor& source, const diff::Tensor& depth, const diff::Tensor& pose,
                                       const CameraIntrinsics& K) {
    if (source.rank() != 4 || source.dim(2) != K.height || source.dim(3) != K.width) {
        throw ShapeError("synthesize_view: source image does not match intrinsics");
    }
    const bool entries = pose.rank() == 2 && pose.dim(1) == 12;
    auto proj = project_grid(depth, entries ? pose : pose_matrix(pose), K);
    auto sampled = diff::bilinear_sample(source, proj.grid);
    return {std::move(sampled.values), sampled.valid & proj.in_front, std::move(proj.grid)};
}

inline SynthesizedView synthesize_view(const diff::Tensor& source, const diff::Tensor& depth, const PoseVec6& pose,
                                       const CameraIntrinsics& K) {
    diff::Tensor p = pose_tensor(pose);
    if (source.dim(0) > 1) {
        std::vector<diff::Tensor> rows(source.dim(0), p);
        p = diff::concat(rows, 0);
    }
    return synthesize_view(source, depth, p, K);
}

}  // namespace egolab::geom
