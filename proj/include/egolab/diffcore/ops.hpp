#pragma once

#include <Eigen/Core>

#include "egolab/diffcore/tensor.hpp"

namespace egolab::diff {

enum class Elementwise { add, sub, mul, div, abs, exp, neg, min, max, clamp, pow2, sigmoid, relu, elu, log, sqrt };

namespace detail {

// Row-major strides with zero stride on broadcast (extent-1) axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        st[i] = in[i] == 1 && out[i] != 1 ? 0 : s;
        s *= in[i];
    }
    return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    if (a.size() != b.size()) {
        throw ShapeError("rank mismatch in elementwise op: " + shape_str(a) + " vs " + shape_str(b));
    }
    Shape out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || b[i] == 1) {
            out[i] = a[i];
        } else if (a[i] == 1) {
            out[i] = b[i];
        } else {
            throw ShapeError("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
        }
    }
    return out;
}

// Calls f(out_index, a_index, b_index) for every output element.
template <typename F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
    const std::size_t n = shape_size(out);
    if (a == out && b == out) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const auto sa = broadcast_strides(a, out);
    const auto sb = broadcast_strides(b, out);
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            ia -= sa[d] * (out[d] - 1);
            ib -= sb[d] * (out[d] - 1);
            idx[d] = 0;
        }
    }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv, const char* name) {
    std::vector<Real> out(a.size());
    const auto& x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a},
        [a, deriv](Node& n) {
            Real* ga = Tensor::parent_grad(n, 0);
            const auto& x = a.data();
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i] * deriv(x[i], n.data[i]);
        },
        name);
}

}  // namespace detail

/// Binary elementwise op with extent-1 broadcasting. `min` routes the
/// gradient to `a` on ties.
inline Tensor binary(Elementwise kind, const Tensor& a, const Tensor& b) {
    const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
    std::vector<Real> out(shape_size(out_shape));
    const auto& x = a.data();
    const auto& y = b.data();
    const char* name = "elementwise";
    switch (kind) {
        case Elementwise::add:
            name = "add";
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) { out[i] = x[ia] + y[ib]; });
            break;
        case Elementwise::sub:
            name = "sub";
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) { out[i] = x[ia] - y[ib]; });
            break;
        case Elementwise::mul:
            name = "mul";
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) { out[i] = x[ia] * y[ib]; });
            break;
        case Elementwise::div:
            name = "div";
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) {
                if (std::abs(y[ib]) < 1e-12) throw NumericError("div: divisor magnitude below 1e-12");
                out[i] = x[ia] / y[ib];
            });
            break;
        case Elementwise::min:
            name = "min";
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) { out[i] = std::min(x[ia], y[ib]); });
            break;
        case Elementwise::max:
            name = "max";
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) { out[i] = std::max(x[ia], y[ib]); });
            break;
        default:
            throw Error("binary(): op kind is not binary");
    }
    return Tensor::make_result(out_shape, std::move(out), {a, b},
        [a, b, kind, out_shape](detail::Node& n) {
            Real* ga = Tensor::parent_grad(n, 0);
            Real* gb = Tensor::parent_grad(n, 1);
            const auto& x = a.data();
            const auto& y = b.data();
            const auto& g = n.grad;
            detail::for_each_broadcast(out_shape, a.shape(), b.shape(), [&](auto i, auto ia, auto ib) {
                Real da = 0, db = 0;
                switch (kind) {
                    case Elementwise::add: da = 1; db = 1; break;
                    case Elementwise::sub: da = 1; db = -1; break;
                    case Elementwise::mul: da = y[ib]; db = x[ia]; break;
                    case Elementwise::div: da = 1 / y[ib]; db = -x[ia] / (y[ib] * y[ib]); break;
                    case Elementwise::min: (x[ia] <= y[ib] ? da : db) = 1; break;
                    case Elementwise::max: (x[ia] >= y[ib] ? da : db) = 1; break;
                    default: break;
                }
                if (ga) ga[ia] += g[i] * da;
                if (gb) gb[ib] += g[i] * db;
            });
        },
        name);
}

/// Unary elementwise op. `lo`/`hi` are only read by clamp.
inline Tensor unary(Elementwise kind, const Tensor& a, Real lo = 0, Real hi = 0) {
    switch (kind) {
        case Elementwise::abs:
            return detail::unary(a, [](Real v) { return std::abs(v); },
                                 [](Real v, Real) { return v > 0 ? Real{1} : (v < 0 ? Real{-1} : Real{0}); }, "abs");
        case Elementwise::exp:
            return detail::unary(a, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; }, "exp");
        case Elementwise::neg:
            return detail::unary(a, [](Real v) { return -v; }, [](Real, Real) { return Real{-1}; }, "neg");
        case Elementwise::pow2:
            return detail::unary(a, [](Real v) { return v * v; }, [](Real v, Real) { return 2 * v; }, "pow2");
        case Elementwise::clamp:
            if (lo > hi) throw Error("clamp: lo > hi");
            return detail::unary(a, [lo, hi](Real v) { return std::clamp(v, lo, hi); },
                                 [lo, hi](Real v, Real) { return (v >= lo && v <= hi) ? Real{1} : Real{0}; }, "clamp");
        case Elementwise::sigmoid:
            return detail::unary(a, [](Real v) { return v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v)); },
                                 [](Real, Real y) { return y * (1 - y); }, "sigmoid");
        case Elementwise::relu:
            return detail::unary(a, [](Real v) { return v > 0 ? v : Real{0}; },
                                 [](Real v, Real) { return v > 0 ? Real{1} : Real{0}; }, "relu");
        case Elementwise::elu:
            return detail::unary(a, [](Real v) { return v > 0 ? v : std::expm1(v); },
                                 [](Real v, Real y) { return v > 0 ? Real{1} : y + 1; }, "elu");
        case Elementwise::log:
            for (Real v : a.data()) {
                if (v <= 0) throw NumericError("log of non-positive value");
            }
            return detail::unary(a, [](Real v) { return std::log(v); }, [](Real v, Real) { return 1 / v; }, "log");
        case Elementwise::sqrt:
            for (Real v : a.data()) {
                if (v <= 0) throw NumericError("sqrt of non-positive value");
            }
            return detail::unary(a, [](Real v) { return std::sqrt(v); }, [](Real, Real y) { return 1 / (2 * y); }, "sqrt");
        default:
            throw Error("unary(): op kind is not unary");
    }
}

/// Generic entry point over every elementwise kind.
inline Tensor elementwise(Elementwise kind, const Tensor& a, const Tensor* b = nullptr) {
    switch (kind) {
        case Elementwise::add:
        case Elementwise::sub:
        case Elementwise::mul:
        case Elementwise::div:
        case Elementwise::min:
        case Elementwise::max:
            if (!b) throw Error("binary elementwise op needs two operands");
            return binary(kind, a, *b);
        default:
            return unary(kind, a);
    }
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return binary(Elementwise::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return binary(Elementwise::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return binary(Elementwise::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return binary(Elementwise::div, a, b); }
inline Tensor operator-(const Tensor& a) { return unary(Elementwise::neg, a); }
inline Tensor minimum(const Tensor& a, const Tensor& b) { return binary(Elementwise::min, a, b); }
inline Tensor maximum(const Tensor& a, const Tensor& b) { return binary(Elementwise::max, a, b); }
inline Tensor abs(const Tensor& a) { return unary(Elementwise::abs, a); }
inline Tensor exp(const Tensor& a) { return unary(Elementwise::exp, a); }
inline Tensor square(const Tensor& a) { return unary(Elementwise::pow2, a); }
inline Tensor clamp(const Tensor& a, Real lo, Real hi) { return unary(Elementwise::clamp, a, lo, hi); }
inline Tensor sigmoid(const Tensor& a) { return unary(Elementwise::sigmoid, a); }
inline Tensor relu(const Tensor& a) { return unary(Elementwise::relu, a); }
inline Tensor elu(const Tensor& a) { return unary(Elementwise::elu, a); }
inline Tensor log(const Tensor& a) { return unary(Elementwise::log, a); }
inline Tensor sqrt(const Tensor& a) { return unary(Elementwise::sqrt, a); }

/// a * c + d for constants c, d.
inline Tensor affine(const Tensor& a, Real scale, Real shift = 0) {
    return detail::unary(a, [scale, shift](Real v) { return v * scale + shift; },
                         [scale](Real, Real) { return scale; }, "affine");
}
inline Tensor operator*(const Tensor& a, Real c) { return affine(a, c); }
inline Tensor operator*(Real c, const Tensor& a) { return affine(a, c); }
inline Tensor operator+(const Tensor& a, Real c) { return affine(a, 1, c); }
inline Tensor operator-(Real c, const Tensor& a) { return affine(a, -1, c); }

/// Picks `a` where the mask is set and `b` elsewhere. Shapes must match.
inline Tensor where(const Mask& m, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || m.size() != a.size()) throw ShapeError("where(): shape mismatch");
    std::vector<Real> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m[i] ? a[i] : b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b},
        [m](detail::Node& n) {
            Real* ga = Tensor::parent_grad(n, 0);
            Real* gb = Tensor::parent_grad(n, 1);
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                if (m[i]) {
                    if (ga) ga[i] += n.grad[i];
                } else if (gb) {
                    gb[i] += n.grad[i];
                }
            }
        },
        "where");
}

enum class Reduce { sum, mean, min };

/// Reduces over `axes` (empty = all axes). The reduced axes are kept with
/// extent 1 when `keepdims`, otherwise dropped (a full reduction yields
/// shape [1]). Min routes the gradient to the lowest-index minimum.
inline Tensor reduce(Reduce kind, const Tensor& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
    const Shape& in = a.shape();
    if (axes.empty()) {
        axes.resize(in.size());
        std::iota(axes.begin(), axes.end(), 0);
    }
    std::vector<bool> reduced(in.size(), false);
    for (auto ax : axes) {
        if (ax >= in.size()) throw ShapeError("reduce axis out of range");
        reduced[ax] = true;
    }
    Shape kept(in.size());
    Shape out_shape;
    for (std::size_t i = 0; i < in.size(); ++i) {
        kept[i] = reduced[i] ? 1 : in[i];
        if (keepdims || !reduced[i]) out_shape.push_back(kept[i]);
    }
    if (out_shape.empty()) out_shape = {1};

    // Map every input element to its output group.
    const std::size_t n_in = a.size();
    const std::size_t n_out = shape_size(kept);
    const std::size_t group = n_in / n_out;
    std::vector<std::size_t> target(n_in);
    detail::for_each_broadcast(in, kept, in, [&](auto i, auto io, auto) { target[i] = io; });

    const auto& x = a.data();
    std::vector<Real> out(n_out, 0);
    std::vector<std::size_t> argmin;
    switch (kind) {
        case Reduce::sum:
        case Reduce::mean:
            for (std::size_t i = 0; i < n_in; ++i) out[target[i]] += x[i];
            if (kind == Reduce::mean) {
                for (auto& v : out) v /= Real(group);
            }
            break;
        case Reduce::min: {
            argmin.assign(n_out, n_in);
            for (std::size_t i = 0; i < n_in; ++i) {
                auto& am = argmin[target[i]];
                if (am == n_in || x[i] < x[am]) am = i;
            }
            for (std::size_t o = 0; o < n_out; ++o) out[o] = x[argmin[o]];
            break;
        }
    }
    return Tensor::make_result(out_shape, std::move(out), {a},
        [kind, target = std::move(target), argmin = std::move(argmin), group](detail::Node& n) {
            Real* ga = Tensor::parent_grad(n, 0);
            const auto& g = n.grad;
            if (kind == Reduce::min) {
                for (std::size_t o = 0; o < argmin.size(); ++o) ga[argmin[o]] += g[o];
                return;
            }
            const Real scale = kind == Reduce::mean ? Real{1} / Real(group) : Real{1};
            for (std::size_t i = 0; i < target.size(); ++i) ga[i] += g[target[i]] * scale;
        },
        kind == Reduce::min ? "reduce_min" : "reduce");
}

inline Tensor sum(const Tensor& a) { return reduce(Reduce::sum, a); }
inline Tensor mean(const Tensor& a) { return reduce(Reduce::mean, a); }

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) throw ShapeError("reshape to " + shape_str(shape) + " from " + shape_str(a.shape()));
    return Tensor::make_result(std::move(shape), a.data(), {a},
        [](detail::Node& n) {
            Real* ga = Tensor::parent_grad(n, 0);
            for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
        },
        "reshape");
}

namespace detail {
// outer = product of extents before axis, inner = product after.
inline std::pair<std::size_t, std::size_t> split_at(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, inner};
}
}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Shape out_shape = parts[0].shape();
    if (axis >= out_shape.size()) throw ShapeError("concat axis out of range");
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != parts[0].dim(i)) throw ShapeError("concat extent mismatch on axis " + std::to_string(i));
        }
        out_shape[axis] += s[axis];
    }
    const auto [outer, inner] = detail::split_at(out_shape, axis);
    const std::size_t out_row = out_shape[axis] * inner;
    std::vector<Real> out(shape_size(out_shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t row = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.data().begin() + o * row, row, out.begin() + o * out_row + offset);
        }
        offset += row;
    }
    return Tensor::make_result(out_shape, std::move(out), parts,
        [parts, axis, outer = outer, out_row](detail::Node& n) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < parts.size(); ++k) {
                const auto [o_, inner] = detail::split_at(parts[k].shape(), axis);
                const std::size_t row = parts[k].dim(axis) * inner;
                if (Real* gp = Tensor::parent_grad(n, k)) {
                    for (std::size_t o = 0; o < outer; ++o) {
                        for (std::size_t j = 0; j < row; ++j) gp[o * row + j] += n.grad[o * out_row + offset + j];
                    }
                }
                offset += row;
            }
        },
        "concat");
}

/// Sub-range [start, start+length) along one axis.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
    if (axis >= a.rank() || length == 0 || start + length > a.dim(axis)) throw ShapeError("slice out of range");
    Shape out_shape = a.shape();
    out_shape[axis] = length;
    const auto [outer, inner] = detail::split_at(a.shape(), axis);
    const std::size_t in_row = a.dim(axis) * inner;
    const std::size_t row = length * inner;
    std::vector<Real> out(shape_size(out_shape));
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.data().begin() + o * in_row + start * inner, row, out.begin() + o * row);
    }
    return Tensor::make_result(out_shape, std::move(out), {a},
        [outer = outer, in_row, row, off = start * inner](detail::Node& n) {
            Real* ga = Tensor::parent_grad(n, 0);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t j = 0; j < row; ++j) ga[o * in_row + off + j] += n.grad[o * row + j];
            }
        },
        "slice");
}

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const auto m = Eigen::Index(a.dim(0)), k = Eigen::Index(a.dim(1)), nc = Eigen::Index(b.dim(1));
    std::vector<Real> out(std::size_t(m * nc));
    Eigen::Map<RowMat>(out.data(), m, nc) =
        Eigen::Map<const RowMat>(a.data().data(), m, k) * Eigen::Map<const RowMat>(b.data().data(), k, nc);
    return Tensor::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b},
        [a, b, m, k, nc](detail::Node& n) {
            Eigen::Map<const RowMat> g(n.grad.data(), m, nc);
            if (Real* ga = Tensor::parent_grad(n, 0)) {
                Eigen::Map<RowMat>(ga, m, k).noalias() += g * Eigen::Map<const RowMat>(b.data().data(), k, nc).transpose();
            }
            if (Real* gb = Tensor::parent_grad(n, 1)) {
                Eigen::Map<RowMat>(gb, k, nc).noalias() += Eigen::Map<const RowMat>(a.data().data(), m, k).transpose() * g;
            }
        },
        "matmul");
}

}  // namespace egolab::diff
