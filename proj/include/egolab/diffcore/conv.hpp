#pragma once

#include <Eigen/Core>

#include "egolab/diffcore/tensor.hpp"

namespace egolab::diff {

namespace detail {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    std::size_t c, h, w, k, stride, pad, ho, wo;
    std::size_t rows() const { return c * k * k; }
    std::size_t cols() const { return ho * wo; }
};

inline void im2col(const Real* img, const ConvGeometry& g, Real* cols) {
    const std::size_t ncol = g.cols();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                Real* dst = cols + ((c * g.k + ky) * g.k + kx) * ncol;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long y = long(oy * g.stride + ky) - long(g.pad);
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long x = long(ox * g.stride + kx) - long(g.pad);
                        const bool inside = y >= 0 && y < long(g.h) && x >= 0 && x < long(g.w);
                        dst[oy * g.wo + ox] = inside ? img[(c * g.h + std::size_t(y)) * g.w + std::size_t(x)] : Real{0};
                    }
                }
            }
        }
    }
}

inline void col2im_add(const Real* cols, const ConvGeometry& g, Real* img) {
    const std::size_t ncol = g.cols();
    for (std::size_t c = 0; c < g.c; ++c) {
        for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const Real* src = cols + ((c * g.k + ky) * g.k + kx) * ncol;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const long y = long(oy * g.stride + ky) - long(g.pad);
                    if (y < 0 || y >= long(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const long x = long(ox * g.stride + kx) - long(g.pad);
                        if (x < 0 || x >= long(g.w)) continue;
                        img[(c * g.h + std::size_t(y)) * g.w + std::size_t(x)] += src[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. input [N,C,H,W], kernel
/// [O,C,K,K] with K odd; output [N,O,Ho,Wo], Ho = (H + 2p - K)/stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0) {
    if (input.rank() != 4 || kernel.rank() != 4) throw ShapeError("conv2d expects NCHW input and OIKK kernel");
    const std::size_t n = input.dim(0), o = kernel.dim(0), k = kernel.dim(2);
    if (kernel.dim(1) != input.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", kernel " + shape_str(kernel.shape()));
    }
    if (kernel.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d kernel must be square with odd side");
    if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
    const std::size_t h = input.dim(2), w = input.dim(3);
    if (k > h + 2 * padding || k > w + 2 * padding) throw ShapeError("conv2d kernel larger than padded input");
    const detail::ConvGeometry g{input.dim(1), h, w, k, stride, padding,
                                 (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1};

    const auto rows = Eigen::Index(g.rows()), cols = Eigen::Index(g.cols());
    const std::size_t in_plane = g.c * h * w, out_plane = o * g.cols();
    std::vector<Real> out(n * out_plane);
    std::vector<Real> buf(g.rows() * g.cols());
    Eigen::Map<const detail::RowMat> wmat(kernel.data().data(), Eigen::Index(o), rows);
    for (std::size_t b = 0; b < n; ++b) {
        detail::im2col(input.data().data() + b * in_plane, g, buf.data());
        Eigen::Map<detail::RowMat>(out.data() + b * out_plane, Eigen::Index(o), cols).noalias() =
            wmat * Eigen::Map<const detail::RowMat>(buf.data(), rows, cols);
    }
    return Tensor::make_result({n, o, g.ho, g.wo}, std::move(out), {input, kernel},
        [input, kernel, g, n, o, in_plane, out_plane](detail::Node& node) {
            Real* gin = Tensor::parent_grad(node, 0);
            Real* gk = Tensor::parent_grad(node, 1);
            const auto rows = Eigen::Index(g.rows()), cols = Eigen::Index(g.cols());
            std::vector<Real> buf(g.rows() * g.cols());
            Eigen::Map<const detail::RowMat> wmat(kernel.data().data(), Eigen::Index(o), rows);
            for (std::size_t b = 0; b < n; ++b) {
                Eigen::Map<const detail::RowMat> gout(node.grad.data() + b * out_plane, Eigen::Index(o), cols);
                if (gk) {
                    detail::im2col(input.data().data() + b * in_plane, g, buf.data());
                    Eigen::Map<detail::RowMat>(gk, Eigen::Index(o), rows).noalias() +=
                        gout * Eigen::Map<const detail::RowMat>(buf.data(), rows, cols).transpose();
                }
                if (gin) {
                    Eigen::Map<detail::RowMat>(buf.data(), rows, cols).noalias() = wmat.transpose() * gout;
                    detail::col2im_add(buf.data(), g, gin + b * in_plane);
                }
            }
        },
        "conv2d");
}

}  // namespace egolab::diff
