#pragma once

// Ray-cast rendering of simple textured surfaces with exact depth. World
// coordinates coincide with a camera looking down +z; surfaces are
// described as height above the x-y plane so texture can be pinned to
// world (x, y).

#include <random>
#include <variant>

#include <nlohmann/json.hpp>

#include "egolab/geometry/camera.hpp"
#include "egolab/geometry/pose.hpp"

namespace egolab::synth {

using geom::CameraIntrinsics;
using geom::PoseVec6;
using geom::SE3Transform;
using geom::Vec3;

struct FrontoPlane {
    double depth = 10;  // plane z = depth
};

struct SlantedPlane {
    Vec3 normal{0, 0, 1};  // plane n . X = offset
    double offset = 10;
};

struct RandomHeightfield {
    double base_depth = 10;
    double amplitude = 1;   // max |z - base_depth|
    double smoothness = 6;  // shortest relief wavelength (m)
};

using SceneGeometry = std::variant<FrontoPlane, SlantedPlane, RandomHeightfield>;

/// Band-limited procedural texture: per channel a sum of at most 8 random
/// sinusoids over world (x, y).
struct TextureConfig {
    std::size_t components = 8;
    double min_wavelength = 3.0;  // m
    double max_wavelength = 8.0;  // m
    double amplitude = 0.4;       // total, so values stay inside [0.1, 0.9]
};

struct SceneConfig {
    std::uint64_t texture_seed = 1;
    SceneGeometry geometry = FrontoPlane{};
    std::size_t height = 64, width = 64;
    CameraIntrinsics intrinsics = CameraIntrinsics::make(50, 50, 31.5, 31.5, 64, 64);
    TextureConfig texture;

    void validate() const {
        intrinsics.validate();
        if (intrinsics.width != width || intrinsics.height != height) throw Error("scene: intrinsics do not match image size");
        if (texture.components == 0 || texture.components > 8) throw Error("scene: texture needs 1..8 components");
        if (!(texture.min_wavelength > 0 && texture.max_wavelength >= texture.min_wavelength)) {
            throw Error("scene: invalid texture wavelengths");
        }
        if (auto* f = std::get_if<FrontoPlane>(&geometry); f && !(f->depth > 0)) throw Error("scene: plane depth must be > 0");
        if (auto* s = std::get_if<SlantedPlane>(&geometry); s && !(s->normal.norm() > 0)) throw Error("scene: zero plane normal");
        if (auto* r = std::get_if<RandomHeightfield>(&geometry); r && !(r->base_depth - r->amplitude > 0 && r->smoothness > 0)) {
            throw Error("scene: heightfield must stay in front of the origin");
        }
    }
};

namespace detail {

struct Wave {
    double kx, ky, phase, amplitude;
};

inline std::vector<Wave> random_waves(std::mt19937_64& rng, std::size_t count, double min_wl, double max_wl, double total_amp) {
    std::uniform_real_distribution<double> angle(0, 2 * std::numbers::pi), unit(0, 1);
    std::vector<Wave> waves;
    std::vector<double> weights;
    for (std::size_t i = 0; i < count; ++i) {
        const double wl = min_wl + (max_wl - min_wl) * unit(rng);
        const double dir = angle(rng);
        const double k = 2 * std::numbers::pi / wl;
        waves.push_back({k * std::cos(dir), k * std::sin(dir), angle(rng), 0});
        weights.push_back(0.5 + unit(rng));
    }
    double wsum = 0;
    for (double w : weights) wsum += w;
    for (std::size_t i = 0; i < count; ++i) waves[i].amplitude = total_amp * weights[i] / wsum;
    return waves;
}

inline double eval_waves(const std::vector<Wave>& waves, double x, double y) {
    double v = 0;
    for (const auto& w : waves) v += w.amplitude * std::sin(w.kx * x + w.ky * y + w.phase);
    return v;
}

}  // namespace detail

/// Colour and surface of a configured scene, queried by world point.
class Scene {
public:
    explicit Scene(SceneConfig config) : config_(std::move(config)) {
        config_.validate();
        std::mt19937_64 rng(config_.texture_seed);
        for (auto& ch : texture_) {
            ch = detail::random_waves(rng, config_.texture.components, config_.texture.min_wavelength,
                                      config_.texture.max_wavelength, config_.texture.amplitude);
        }
        if (auto* hf = std::get_if<RandomHeightfield>(&config_.geometry)) {
            relief_ = detail::random_waves(rng, 4, hf->smoothness, 2 * hf->smoothness, hf->amplitude);
        }
    }

    const SceneConfig& config() const { return config_; }

    std::array<double, 3> color(double x, double y) const {
        std::array<double, 3> c;
        for (std::size_t ch = 0; ch < 3; ++ch) c[ch] = 0.5 + detail::eval_waves(texture_[ch], x, y);
        return c;
    }

    /// Ray parameter of the first surface hit from `origin` along `dir`, or
    /// a negative value when the ray misses or starts behind the surface.
    double intersect(const Vec3& o, const Vec3& d) const {
        return std::visit([&](const auto& g) { return hit(g, o, d); }, config_.geometry);
    }

private:
    double hit(const FrontoPlane& g, const Vec3& o, const Vec3& d) const {
        if (d.z() <= 0 || o.z() >= g.depth) return -1;
        return (g.depth - o.z()) / d.z();
    }

    double hit(const SlantedPlane& g, const Vec3& o, const Vec3& d) const {
        const double den = g.normal.dot(d);
        if (std::abs(den) < 1e-12) return -1;
        return (g.offset - g.normal.dot(o)) / den;
    }

    double hit(const RandomHeightfield& g, const Vec3& o, const Vec3& d) const {
        auto gap = [&](double t) {
            const Vec3 p = o + t * d;
            return p.z() - (g.base_depth + detail::eval_waves(relief_, p.x(), p.y()));
        };
        if (d.z() <= 0 || gap(0) >= 0) return -1;
        double lo = std::max(0.0, (g.base_depth - g.amplitude - o.z()) / d.z());
        const double far = (g.base_depth + g.amplitude - o.z()) / d.z();
        const int steps = 256;
        const double dt = (far - lo) / steps;
        double hi = lo;
        for (int i = 0; i <= steps; ++i) {
            hi = lo + dt;
            if (gap(hi) >= 0) break;
            lo = hi;
        }
        for (int i = 0; i < 60; ++i) {
            const double mid = 0.5 * (lo + hi);
            (gap(mid) < 0 ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    SceneConfig config_;
    std::array<std::vector<detail::Wave>, 3> texture_;
    std::vector<detail::Wave> relief_;
};

/// One rendered view: RGB [1,3,H,W] in [0,1] and z-depth [1,1,H,W].
struct RenderedView {
    diff::Tensor image;
    diff::Tensor depth;
};

/// Renders the view of a camera whose camera-to-world pose is `pose`.
inline RenderedView render(const Scene& scene, const SE3Transform& pose) {
    const auto& cfg = scene.config();
    const auto& K = cfg.intrinsics;
    const std::size_t h = cfg.height, w = cfg.width, n = h * w;
    std::vector<Real> rgb(3 * n), depth(n);
    const geom::Mat3& R = pose.rotation();
    const Vec3& origin = pose.translation();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const Vec3 ray_cam((double(x) - K.cx) / K.fx, (double(y) - K.cy) / K.fy, 1.0);
            const Vec3 dir = R * ray_cam;
            const double t = scene.intersect(origin, dir);
            if (!(t > 0) || !std::isfinite(t)) throw Error("render: camera is behind or inside the scene geometry");
            const Vec3 p = origin + t * dir;
            const auto c = scene.color(p.x(), p.y());
            for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch * n + y * w + x] = std::clamp(c[ch], 0.0, 1.0);
            depth[y * w + x] = t;  // ray_cam has unit z, so t is the camera z-depth
        }
    }
    return {diff::Tensor({1, 3, h, w}, std::move(rgb)), diff::Tensor({1, 1, h, w}, std::move(depth))};
}

// ---- JSON ------------------------------------------------------------------

inline void to_json(nlohmann::json& j, const TextureConfig& t) {
    j = {{"components", t.components}, {"min_wavelength", t.min_wavelength}, {"max_wavelength", t.max_wavelength},
         {"amplitude", t.amplitude}};
}
inline void from_json(const nlohmann::json& j, TextureConfig& t) {
    check_keys(j, {"components", "min_wavelength", "max_wavelength", "amplitude"}, "texture");
    t.components = j.value("components", t.components);
    t.min_wavelength = j.value("min_wavelength", t.min_wavelength);
    t.max_wavelength = j.value("max_wavelength", t.max_wavelength);
    t.amplitude = j.value("amplitude", t.amplitude);
}

inline void to_json(nlohmann::json& j, const SceneGeometry& g) {
    if (auto* f = std::get_if<FrontoPlane>(&g)) {
        j = {{"type", "fronto_plane"}, {"depth", f->depth}};
    } else if (auto* s = std::get_if<SlantedPlane>(&g)) {
        j = {{"type", "slanted_plane"}, {"normal", {s->normal.x(), s->normal.y(), s->normal.z()}}, {"offset", s->offset}};
    } else {
        const auto& r = std::get<RandomHeightfield>(g);
        j = {{"type", "random_heightfield"}, {"base_depth", r.base_depth}, {"amplitude", r.amplitude}, {"smoothness", r.smoothness}};
    }
}
inline void from_json(const nlohmann::json& j, SceneGeometry& g) {
    const auto type = j.at("type").get<std::string>();
    if (type == "fronto_plane") {
        check_keys(j, {"type", "depth"}, "geometry");
        g = FrontoPlane{j.value("depth", 10.0)};
    } else if (type == "slanted_plane") {
        check_keys(j, {"type", "normal", "offset"}, "geometry");
        const auto n = j.at("normal").get<std::vector<double>>();
        if (n.size() != 3) throw Error("slanted_plane normal needs 3 components");
        g = SlantedPlane{Vec3(n[0], n[1], n[2]), j.at("offset").get<double>()};
    } else if (type == "random_heightfield") {
        check_keys(j, {"type", "base_depth", "amplitude", "smoothness"}, "geometry");
        g = RandomHeightfield{j.value("base_depth", 10.0), j.value("amplitude", 1.0), j.value("smoothness", 6.0)};
    } else {
        throw Error("unknown scene geometry type '" + type + "'");
    }
}

inline void to_json(nlohmann::json& j, const SceneConfig& s) {
    j = {{"texture_seed", s.texture_seed}, {"geometry", s.geometry}, {"image_size", {s.height, s.width}},
         {"intrinsics", s.intrinsics}, {"texture", s.texture}};
}
inline void from_json(const nlohmann::json& j, SceneConfig& s) {
    check_keys(j, {"texture_seed", "geometry", "image_size", "intrinsics", "texture"}, "scene");
    s.texture_seed = j.value("texture_seed", s.texture_seed);
    if (j.contains("geometry")) s.geometry = j.at("geometry").get<SceneGeometry>();
    if (j.contains("image_size")) {
        const auto sz = j.at("image_size").get<std::vector<std::size_t>>();
        if (sz.size() != 2) throw Error("image_size must be [H, W]");
        s.height = sz[0];
        s.width = sz[1];
    }
    if (j.contains("intrinsics")) {
        s.intrinsics = j.at("intrinsics").get<CameraIntrinsics>();
    } else {
        // default: 50 px focal per 64 px of width, centred principal point
        const double f = 50.0 * double(s.width) / 64.0;
        s.intrinsics = CameraIntrinsics::make(f, f, (double(s.width) - 1) / 2, (double(s.height) - 1) / 2, s.width, s.height);
    }
    if (j.contains("texture")) s.texture = j.at("texture").get<TextureConfig>();
    s.validate();
}

}  // namespace egolab::synth
