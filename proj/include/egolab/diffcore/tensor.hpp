#pragma once

// Dense row-major arrays that record the operations applied to them so that
// gradients can be pulled back through the resulting graph.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace egolab {

using Real = double;
using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

inline void check_finite(const std::vector<Real>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            std::ostringstream os;
            os << what << ": non-finite value " << v[i] << " at flat index " << i;
            throw NumericError(os.str());
        }
    }
}

namespace diff {

class Tensor;

namespace detail {

struct Node {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until touched by backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward;

    std::vector<Real>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), Real{0});
        return grad;
    }
};

}  // namespace detail

/// Handle to a node of the gradient graph. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto e : shape) {
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
        if (shape_size(shape) != data.size()) {
            throw ShapeError("shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
        }
        check_finite(data, "tensor construction");
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(const Shape& shape, bool requires_grad = false) {
        return Tensor(shape, std::vector<Real>(shape_size(shape), Real{0}), requires_grad);
    }

    static Tensor full(const Shape& shape, Real value, bool requires_grad = false) {
        return Tensor(shape, std::vector<Real>(shape_size(shape), value), requires_grad);
    }

    static Tensor scalar(Real value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->data.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<Real>& data() const& { return node_->data; }
    // Temporaries hand out a copy so range-for over f(x).data() stays valid.
    std::vector<Real> data() const&& { return node_->data; }
    /// Mutable access is only meaningful for leaves; interior nodes have
    /// already propagated their values.
    std::vector<Real>& mutable_data() { return node_->data; }

    Real item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    Real operator[](std::size_t i) const { return node_->data[i]; }

    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient of the last backward pass; zeros if none reached this node.
    std::vector<Real> grad() const {
        return node_->grad.empty() ? std::vector<Real>(size(), Real{0}) : node_->grad;
    }
    void zero_grad() { node_->grad.clear(); }

    /// Same values, cut from the graph.
    Tensor detach() const { return Tensor(shape(), data(), false); }

    /// Reverse-mode sweep from this tensor. A scalar root gets seed 1 unless
    /// an explicit upstream gradient is given.
    void backward() const {
        if (size() != 1) throw ShapeError("backward() without seed needs a scalar root");
        backward(std::vector<Real>{Real{1}});
    }

    void backward(const std::vector<Real>& seed) const {
        if (seed.size() != size()) throw ShapeError("backward seed has wrong size");
        if (!node_->requires_grad) return;
        std::vector<detail::Node*> order;
        topo_sort(order);
        auto& g = node_->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

    /// Builds an interior node. Only called by operation implementations.
    static Tensor make_result(Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
                              std::function<void(detail::Node&)> backward, const char* op) {
        check_finite(data, op);
        Tensor out;
        out.node_ = std::make_shared<detail::Node>();
        out.node_->shape = std::move(shape);
        out.node_->data = std::move(data);
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            out.node_->requires_grad = true;
            for (auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward = std::move(backward);
        }
        return out;
    }

    /// Gradient buffer of a parent inside a backward closure, or nullptr if
    /// that parent does not take gradients.
    static Real* parent_grad(detail::Node& n, std::size_t i) {
        auto& p = *n.parents[i];
        return p.requires_grad ? p.grad_buffer().data() : nullptr;
    }

private:
    void topo_sort(std::vector<detail::Node*>& order) const {
        std::unordered_set<detail::Node*> seen;
        std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                detail::Node* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<detail::Node> node_;
};

/// Boolean grid (e.g. warp validity, auto-mask). Never differentiable.
struct Mask {
    Shape shape;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(Shape s, bool value) : shape(std::move(s)), bits(shape_size(shape), value ? 1 : 0) {}

    std::size_t size() const { return bits.size(); }
    bool operator[](std::size_t i) const { return bits[i] != 0; }
    std::size_t count() const {
        return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
    }
    double fraction() const { return bits.empty() ? 0.0 : double(count()) / double(bits.size()); }

    Tensor as_tensor() const {
        std::vector<Real> v(bits.begin(), bits.end());
        return Tensor(shape, std::move(v));
    }

    Mask operator&(const Mask& o) const { return combine(o, [](auto a, auto b) { return a && b; }); }
    Mask operator|(const Mask& o) const { return combine(o, [](auto a, auto b) { return a || b; }); }

private:
    template <typename F>
    Mask combine(const Mask& o, F f) const {
        if (o.shape != shape) throw ShapeError("mask shape mismatch " + shape_str(shape) + " vs " + shape_str(o.shape));
        Mask m(shape, false);
        for (std::size_t i = 0; i < bits.size(); ++i) m.bits[i] = f(bits[i] != 0, o.bits[i] != 0) ? 1 : 0;
        return m;
    }
};

}  // namespace diff
}  // namespace egolab
