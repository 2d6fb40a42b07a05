#pragma once

#include <optional>

#include <nlohmann/json.hpp>

#include "egolab/diffcore/config_keys.hpp"

#include "egolab/networks/params.hpp"

namespace egolab::net {

inline constexpr std::size_t kDepthScales = 4;

struct DepthNetConfig {
    std::size_t base_channels = 8;
    std::size_t encoder_depth = 4;
    double min_depth = 0.1;
    double max_depth = 100.0;
    std::size_t height = 64, width = 64;

    void validate() const {
        if (base_channels == 0) throw Error("depth net: base_channels must be >= 1");
        if (encoder_depth < kDepthScales || encoder_depth > 8) throw Error("depth net: encoder_depth must lie in [4, 8]");
        const std::size_t f = std::size_t{1} << encoder_depth;
        if (height == 0 || width == 0 || height % f || width % f) {
            throw Error("depth net: input size must be divisible by 2^encoder_depth = " + std::to_string(f));
        }
        if (!(min_depth > 0 && max_depth > min_depth)) throw Error("depth net: need 0 < min_depth < max_depth");
    }

    std::size_t channels(std::size_t level) const {  // encoder output channels at level 1..depth
        return base_channels << std::min<std::size_t>(level - 1, 4);
    }
};

inline void to_json(nlohmann::json& j, const DepthNetConfig& c) {
    j = {{"base_channels", c.base_channels}, {"encoder_depth", c.encoder_depth}, {"min_depth", c.min_depth},
         {"max_depth", c.max_depth}, {"input_size", {c.height, c.width}}};
}
inline void from_json(const nlohmann::json& j, DepthNetConfig& c) {
    check_keys(j, {"base_channels", "encoder_depth", "min_depth", "max_depth", "input_size"}, "depth_net");
    c.base_channels = j.value("base_channels", c.base_channels);
    c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
    c.min_depth = j.value("min_depth", c.min_depth);
    c.max_depth = j.value("max_depth", c.max_depth);
    if (j.contains("input_size")) {
        const auto s = j.at("input_size").get<std::vector<std::size_t>>();
        if (s.size() != 2) throw Error("depth net: input_size must be [H, W]");
        c.height = s[0];
        c.width = s[1];
    }
    c.validate();
}

/// Encoder of stride-2 conv stages, decoder that walks back up with skip
/// connections; the four finest decoder levels each emit a disparity map
/// that is upsampled and fed into the next finer level.
inline ParamSet init_depth_params(const DepthNetConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(seed);
    ParamSet ps;
    const std::size_t D = c.encoder_depth;
    auto enc_ch = [&](std::size_t level) { return level == 0 ? std::size_t{3} : c.channels(level); };
    for (std::size_t l = 1; l <= D; ++l) {
        layers::add_conv(ps, "depth.enc" + std::to_string(l) + "a", enc_ch(l - 1), enc_ch(l), 3, rng);
        layers::add_conv(ps, "depth.enc" + std::to_string(l) + "b", enc_ch(l), enc_ch(l), 3, rng);
    }
    auto dec_ch = [&](std::size_t level) { return std::max<std::size_t>(c.channels(level + 1) / 2, c.base_channels); };
    for (std::size_t l = D; l-- > 0;) {
        const std::size_t from = l + 1 == D ? enc_ch(D) : dec_ch(l + 1);
        const std::size_t out = dec_ch(l);
        const std::size_t disp_in = l + 1 < kDepthScales ? 1 : 0;
        layers::add_conv(ps, "depth.dec" + std::to_string(l), from + enc_ch(l) + disp_in, out, 3, rng);
        if (l < kDepthScales) layers::add_conv(ps, "depth.disp" + std::to_string(l), out, 1, 3, rng);
    }
    return ps;
}

/// depth = 1 / (disp_min + (disp_max - disp_min) * sigmoid(logit)), bounded
/// to [min_depth, max_depth].
inline Tensor bounded_depth(const Tensor& logit, double min_depth, double max_depth) {
    const double dmin = 1.0 / max_depth, dmax = 1.0 / min_depth;
    const Tensor disp = diff::affine(diff::sigmoid(logit), dmax - dmin, dmin);
    return Tensor::full(disp.shape(), 1.0) / disp;
}

/// Image [N,3,H,W] -> depth at H, H/2, H/4, H/8 (finest first).
inline std::vector<Tensor> depth_forward(const ParamSet& ps, const DepthNetConfig& c, const Tensor& image) {
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != c.height || image.dim(3) != c.width) {
        throw ShapeError("depth_forward: expected [N,3," + std::to_string(c.height) + "," + std::to_string(c.width) + "], got " +
                         shape_str(image.shape()));
    }
    const std::size_t D = c.encoder_depth;
    std::vector<Tensor> skips{image};
    Tensor x = image;
    for (std::size_t l = 1; l <= D; ++l) {
        x = layers::conv_elu(ps, "depth.enc" + std::to_string(l) + "a", x, 2);
        x = layers::conv_elu(ps, "depth.enc" + std::to_string(l) + "b", x);
        skips.push_back(x);
    }
    std::vector<Tensor> depths(kDepthScales);
    std::optional<Tensor> disp;
    for (std::size_t l = D; l-- > 0;) {
        std::vector<Tensor> parts{layers::upsample2(x), skips[l]};
        if (disp) parts.push_back(layers::upsample2(*disp));
        x = layers::conv_elu(ps, "depth.dec" + std::to_string(l), diff::concat(parts, 1));
        if (l < kDepthScales) {
            const Tensor logit = layers::conv(ps, "depth.disp" + std::to_string(l), x);
            disp = diff::sigmoid(logit);
            depths[l] = bounded_depth(logit, c.min_depth, c.max_depth);
        }
    }
    return depths;
}

}  // namespace egolab::net
