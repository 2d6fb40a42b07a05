#pragma once

// Training configuration, Adam and the learning-rate schedule.

#include <nlohmann/json.hpp>

#include "egolab/augment/noise_patches.hpp"
#include "egolab/losses/photometric.hpp"
#include "egolab/networks/depth_net.hpp"
#include "egolab/networks/pose_net.hpp"
#include "egolab/synthdata/dataset.hpp"

namespace egolab::train {

using diff::Tensor;
using net::ParamSet;

using egolab::check_keys;

/// Frame order fed to the pose network. chronological: the earlier frame
/// always comes first and motions towards past sources are obtained by
/// inverting the predicted transform; target_first: always (target, source).
enum class PoseOrder { chronological, target_first };

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    double lr_depth = 1e-3;
    double lr_pose = 5e-4;
    std::size_t lr_halve_every = 80;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    double grad_clip = 10.0;  // global norm per network; 0 disables
    int param_precision = 32;  // storage precision of parameters and moments
    std::uint64_t seed = 0;
    synth::Context context = synth::Context::two_source;
    PoseOrder pose_order = PoseOrder::chronological;
    loss::LossWeights loss;
    loss::SsimParams ssim;
    aug::AugmentPolicy augment;
    net::DepthNetConfig depth_net;
    net::PoseNetConfig pose_net;

    void validate() const {
        if (epochs == 0) throw Error("train: epochs must be >= 1");
        if (batch_size == 0) throw Error("train: batch_size must be >= 1");
        if (!(lr_depth > 0 && lr_pose > 0)) throw Error("train: learning rates must be positive");
        if (lr_halve_every == 0) throw Error("train: lr_halve_every must be >= 1");
        if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw Error("train: betas must lie in [0, 1)");
        if (!(eps_adam > 0)) throw Error("train: eps_adam must be > 0");
        if (!(grad_clip >= 0)) throw Error("train: grad_clip must be >= 0");
        if (param_precision != 32 && param_precision != 64) throw Error("train: param_precision must be 32 or 64");
        loss.validate();
        ssim.validate();
        augment.validate(depth_net.height, depth_net.width);
        depth_net.validate();
        pose_net.validate();
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"lr_depth", c.lr_depth},
         {"lr_pose", c.lr_pose},
         {"lr_halve_every", c.lr_halve_every},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"eps_adam", c.eps_adam},
         {"grad_clip", c.grad_clip},
         {"param_precision", c.param_precision},
         {"seed", c.seed},
         {"context", c.context == synth::Context::two_source ? "two_source" : "one_source"},
         {"pose_order", c.pose_order == PoseOrder::chronological ? "chronological" : "target_first"},
         {"loss", c.loss},
         {"ssim", c.ssim},
         {"augment", c.augment},
         {"depth_net", c.depth_net},
         {"pose_net", c.pose_net}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    check_keys(j,
               {"epochs", "batch_size", "lr_depth", "lr_pose", "lr_halve_every", "beta1", "beta2", "eps_adam", "grad_clip",
                "param_precision", "seed", "context", "pose_order", "loss", "ssim", "augment", "depth_net", "pose_net"},
               "train");
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_depth = j.value("lr_depth", c.lr_depth);
    c.lr_pose = j.value("lr_pose", c.lr_pose);
    c.lr_halve_every = j.value("lr_halve_every", c.lr_halve_every);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps_adam = j.value("eps_adam", c.eps_adam);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.param_precision = j.value("param_precision", c.param_precision);
    c.seed = j.value("seed", c.seed);
    const auto ctx = j.value("context", std::string("two_source"));
    if (ctx == "two_source") c.context = synth::Context::two_source;
    else if (ctx == "one_source") c.context = synth::Context::one_source;
    else throw Error("train: context must be 'two_source' or 'one_source', got '" + ctx + "'");
    const auto order = j.value("pose_order", std::string("chronological"));
    if (order == "chronological") c.pose_order = PoseOrder::chronological;
    else if (order == "target_first") c.pose_order = PoseOrder::target_first;
    else throw Error("train: pose_order must be 'chronological' or 'target_first', got '" + order + "'");
    if (j.contains("loss")) c.loss = j.at("loss").get<loss::LossWeights>();
    if (j.contains("ssim")) c.ssim = j.at("ssim").get<loss::SsimParams>();
    if (j.contains("augment")) c.augment = j.at("augment").get<aug::AugmentPolicy>();
    if (j.contains("depth_net")) c.depth_net = j.at("depth_net").get<net::DepthNetConfig>();
    if (j.contains("pose_net")) c.pose_net = j.at("pose_net").get<net::PoseNetConfig>();
    c.validate();
}

/// Base rates halved floor(epoch / lr_halve_every) times.
inline std::pair<double, double> lr_at(std::size_t epoch, const TrainConfig& c) {
    const double f = std::ldexp(1.0, -int(epoch / c.lr_halve_every));
    return {c.lr_depth * f, c.lr_pose * f};
}

/// Rounds to the configured storage precision.
inline Real store(Real v, int precision) { return precision == 32 ? Real(float(v)) : v; }

struct Moments {
    std::vector<Real> m, v;
};

struct OptimizerState {
    std::map<std::string, Moments> moments;  // name order matches the ParamSet
    std::uint64_t step = 0;

    static OptimizerState for_params(const ParamSet& ps) {
        OptimizerState s;
        for (const auto& [name, p] : ps.entries()) s.moments[name] = {std::vector<Real>(p.value.size(), 0.0), std::vector<Real>(p.value.size(), 0.0)};
        return s;
    }
    bool operator==(const OptimizerState& o) const {
        if (step != o.step || moments.size() != o.moments.size()) return false;
        for (const auto& [k, m] : moments) {
            auto it = o.moments.find(k);
            if (it == o.moments.end() || it->second.m != m.m || it->second.v != m.v) return false;
        }
        return true;
    }
};

using Gradients = std::map<std::string, std::vector<Real>>;

struct AdamHyper {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int precision = 64;
};

/// Adam with bias correction. Every parameter needs a conformant gradient;
/// non-finite gradients abort before anything is modified.
inline void adam_step(ParamSet& ps, const Gradients& grads, OptimizerState& st, const AdamHyper& h) {
    for (const auto& [name, p] : ps.entries()) {
        auto g = grads.find(name);
        if (g == grads.end()) throw Error("adam_step: no gradient for '" + name + "'");
        if (g->second.size() != p.value.size()) throw ShapeError("adam_step: gradient for '" + name + "' has wrong size");
        for (std::size_t i = 0; i < g->second.size(); ++i) {
            if (!std::isfinite(g->second[i])) {
                throw NumericError("adam_step: non-finite gradient in '" + name + "' at element " + std::to_string(i));
            }
        }
        auto m = st.moments.find(name);
        if (m == st.moments.end() || m->second.m.size() != p.value.size()) {
            throw ShapeError("adam_step: optimizer state does not match parameter '" + name + "'");
        }
    }
    ++st.step;
    const double c1 = 1.0 - std::pow(h.beta1, double(st.step));
    const double c2 = 1.0 - std::pow(h.beta2, double(st.step));
    for (auto& [name, p] : ps.entries()) {
        const auto& g = grads.at(name);
        auto& mo = st.moments.at(name);
        auto& x = p.value.mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            mo.m[i] = store(h.beta1 * mo.m[i] + (1 - h.beta1) * g[i], h.precision);
            mo.v[i] = store(h.beta2 * mo.v[i] + (1 - h.beta2) * g[i] * g[i], h.precision);
            const double mh = mo.m[i] / c1, vh = mo.v[i] / c2;
            x[i] = store(x[i] - h.lr * mh / (std::sqrt(vh) + h.eps), h.precision);
        }
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
inline double clip_grad_norm(Gradients& g, double max_norm) {
    double s = 0;
    for (const auto& [_, v] : g)
        for (Real x : v) s += x * x;
    const double n = std::sqrt(s);
    if (max_norm > 0 && n > max_norm) {
        const double f = max_norm / n;
        for (auto& [_, v] : g)
            for (Real& x : v) x *= f;
    }
    return n;
}

inline void round_params(ParamSet& ps, int precision) {
    for (auto& [_, p] : ps.entries())
        for (Real& v : p.value.mutable_data()) v = store(v, precision);
}

}  // namespace egolab::train
