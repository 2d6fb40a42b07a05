#pragma once

#include <map>
#include <random>

#include "egolab/diffcore/conv.hpp"
#include "egolab/diffcore/ops.hpp"
#include "egolab/diffcore/sampling.hpp"

namespace egolab::net {

using diff::Tensor;

enum class Init { kaiming, zeros };

struct Param {
    Tensor value;
    Init init = Init::kaiming;
    std::size_t fan_in = 0;
};

/// Named trainable tensors. Names are unique and iteration is in name
/// order, which fixes the layout of optimizer state and checkpoints.
class ParamSet {
public:
    void add(const std::string& name, const Shape& shape, Init init, std::size_t fan_in, std::mt19937_64& rng) {
        if (params_.count(name)) throw Error("duplicate parameter '" + name + "'");
        std::vector<Real> v(shape_size(shape), 0.0);
        if (init == Init::kaiming) {
            std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / double(fan_in)));
            for (auto& x : v) x = nd(rng);
        }
        params_[name] = {Tensor(shape, std::move(v), true), init, fan_in};
    }

    const Tensor& operator[](const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
        return it->second.value;
    }
    Tensor& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
        return it->second.value;
    }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    const std::map<std::string, Param>& entries() const { return params_; }
    std::map<std::string, Param>& entries() { return params_; }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, p] : params_) n += p.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, p] : params_) p.value.zero_grad();
    }

    /// Fresh leaves holding copies of the current values: an independent
    /// graph root for one worker.
    ParamSet clone() const {
        ParamSet out;
        for (const auto& [name, p] : params_) out.params_[name] = {Tensor(p.value.shape(), p.value.data(), true), p.init, p.fan_in};
        return out;
    }

    void check_finite() const {
        for (const auto& [name, p] : params_) egolab::check_finite(p.value.data(), name.c_str());
    }

    bool operator==(const ParamSet& o) const {
        if (params_.size() != o.params_.size()) return false;
        for (const auto& [name, p] : params_) {
            auto it = o.params_.find(name);
            if (it == o.params_.end() || it->second.value.shape() != p.value.shape() || it->second.value.data() != p.value.data()) {
                return false;
            }
        }
        return true;
    }

private:
    std::map<std::string, Param> params_;
};

namespace layers {

inline void add_conv(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::mt19937_64& rng,
                     Init init = Init::kaiming) {
    ps.add(name + ".w", {out, in, k, k}, init, in * k * k, rng);
    ps.add(name + ".b", {1, out, 1, 1}, Init::zeros, in * k * k, rng);
}

inline Tensor conv(const ParamSet& ps, const std::string& name, const Tensor& x, std::size_t stride = 1) {
    const Tensor& w = ps[name + ".w"];
    return diff::conv2d(x, w, stride, w.dim(2) / 2) + ps[name + ".b"];
}

inline Tensor conv_elu(const ParamSet& ps, const std::string& name, const Tensor& x, std::size_t stride = 1) {
    return diff::elu(conv(ps, name, x, stride));
}

inline void add_linear(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng, Init init) {
    ps.add(name + ".w", {in, out}, init, in, rng);
    ps.add(name + ".b", {1, out}, Init::zeros, in, rng);
}

inline Tensor linear(const ParamSet& ps, const std::string& name, const Tensor& x) {
    return diff::matmul(x, ps[name + ".w"]) + ps[name + ".b"];
}

inline Tensor upsample2(const Tensor& x) { return diff::resize_bilinear(x, 2 * x.dim(2), 2 * x.dim(3)); }

}  // namespace layers
}  // namespace egolab::net
