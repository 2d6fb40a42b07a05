#pragma once

#include <nlohmann/json.hpp>

#include "egolab/diffcore/config_keys.hpp"
#include "egolab/geometry/pose.hpp"
#include "egolab/networks/params.hpp"

namespace egolab::net {

enum class Fusion { average, sum };

struct PoseNetConfig {
    std::array<std::size_t, 8> tower_channels{8, 16, 16, 32, 32, 64, 64, 64};
    double rotation_scale = 0.01;
    Fusion fusion = Fusion::average;

    void validate() const {
        for (auto c : tower_channels) {
            if (c == 0) throw Error("pose net: tower channels must be >= 1");
        }
        if (!(rotation_scale > 0)) throw Error("pose net: rotation_scale must be > 0");
    }
};

inline void to_json(nlohmann::json& j, const PoseNetConfig& c) {
    j = {{"tower_channels", c.tower_channels}, {"rotation_scale", c.rotation_scale},
         {"fusion", c.fusion == Fusion::average ? "average" : "sum"}};
}
inline void from_json(const nlohmann::json& j, PoseNetConfig& c) {
    check_keys(j, {"tower_channels", "rotation_scale", "fusion"}, "pose_net");
    if (j.contains("tower_channels")) {
        const auto v = j.at("tower_channels").get<std::vector<std::size_t>>();
        if (v.size() != 8) throw Error("pose net: tower_channels must list exactly 8 stages");
        std::copy(v.begin(), v.end(), c.tower_channels.begin());
    }
    c.rotation_scale = j.value("rotation_scale", c.rotation_scale);
    const auto f = j.value("fusion", std::string("average"));
    if (f == "average") c.fusion = Fusion::average;
    else if (f == "sum") c.fusion = Fusion::sum;
    else throw Error("pose net: fusion must be 'average' or 'sum', got '" + f + "'");
    c.validate();
}

namespace detail {
// stages (1-based) 1, 2, 4 and 6 halve the resolution
inline std::size_t tower_stride(std::size_t stage) { return (stage == 0 || stage == 1 || stage == 3 || stage == 5) ? 2 : 1; }
}  // namespace detail

/// Two fully separate towers (RGB pair: 6 channels, depth pair: 2
/// channels), each 8 conv stages + global average pooling + a linear head
/// to 6 outputs. Heads start at zero so the first prediction is identity.
inline ParamSet init_pose_params(const PoseNetConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(seed);
    ParamSet ps;
    for (const auto& [tower, in_ch] : {std::pair<std::string, std::size_t>{"rgb", 6}, {"depth", 2}}) {
        std::size_t in = in_ch;
        for (std::size_t s = 0; s < 8; ++s) {
            layers::add_conv(ps, "pose." + tower + ".conv" + std::to_string(s), in, c.tower_channels[s], 3, rng);
            in = c.tower_channels[s];
        }
        layers::add_linear(ps, "pose." + tower + ".head", in, 6, rng, Init::zeros);
    }
    return ps;
}

/// Inverse depth divided by its per-image mean, cut from the graph.
inline Tensor normalize_depth_for_pose(const Tensor& depth) {
    const Tensor d = depth.detach();
    const Tensor inv = Tensor::full(d.shape(), 1.0) / d;
    return (inv / diff::reduce(diff::Reduce::mean, inv, {1, 2, 3}, true)).detach();
}

namespace detail {
inline Tensor tower(const ParamSet& ps, const std::string& name, Tensor x) {
    for (std::size_t s = 0; s < 8; ++s) x = layers::conv_elu(ps, "pose." + name + ".conv" + std::to_string(s), x, tower_stride(s));
    const Tensor pooled = diff::reduce(diff::Reduce::mean, x, {2, 3});
    return layers::linear(ps, "pose." + name + ".head", pooled);
}
}  // namespace detail

/// Motion x_{t->s} [N,6] = (tx, ty, tz, rx, ry, rz) from the target and one
/// source frame. Depth inputs are already normalised (see
/// normalize_depth_for_pose) and carry no gradient.
inline Tensor pose_forward(const ParamSet& ps, const PoseNetConfig& c, const Tensor& img_t, const Tensor& depth_t,
                           const Tensor& img_s, const Tensor& depth_s) {
    if (img_t.rank() != 4 || img_t.shape() != img_s.shape() || img_t.dim(1) != 3) {
        throw ShapeError("pose_forward: images must both be [N,3,H,W], got " + shape_str(img_t.shape()) + " and " +
                         shape_str(img_s.shape()));
    }
    const Shape dshape{img_t.dim(0), 1, img_t.dim(2), img_t.dim(3)};
    if (depth_t.shape() != dshape || depth_s.shape() != dshape) {
        throw ShapeError("pose_forward: depth inputs must be " + shape_str(dshape));
    }
    const Tensor rgb = detail::tower(ps, "rgb", diff::concat({img_t, img_s}, 1));
    const Tensor dep = detail::tower(ps, "depth", diff::concat({depth_t.detach(), depth_s.detach()}, 1));
    const Tensor fused = c.fusion == Fusion::average ? (rgb + dep) * 0.5 : rgb + dep;
    Tensor scale = Tensor({1, 6}, {1, 1, 1, c.rotation_scale, c.rotation_scale, c.rotation_scale});
    return fused * scale;
}

inline geom::PoseVec6 to_pose_vec(const Tensor& pose, std::size_t row = 0) {
    if (pose.rank() != 2 || pose.dim(1) != 6 || row >= pose.dim(0)) throw ShapeError("to_pose_vec expects [N,6]");
    std::array<double, 6> a;
    for (std::size_t i = 0; i < 6; ++i) a[i] = pose[row * 6 + i];
    return geom::PoseVec6::from_array(a);
}

}  // namespace egolab::net
