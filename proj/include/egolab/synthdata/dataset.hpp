#pragma once

#include <optional>

#include "egolab/geometry/warp.hpp"
#include "egolab/synthdata/scene.hpp"

namespace egolab::synth {

struct Frame {
    diff::Tensor image;                // [1,3,H,W] in [0,1]
    std::optional<diff::Tensor> depth;  // [1,1,H,W] ground-truth z-depth
};

/// Ordered frames of one camera. `poses`, when present, are camera-to-world
/// transforms, one per frame. `meters_per_unit` scales trajectory units to
/// meters for distance-based evaluation.
struct SequenceDataset {
    std::vector<Frame> frames;
    std::vector<SE3Transform> poses;
    CameraIntrinsics intrinsics;
    double frame_spacing = 1.0;  // seconds between frames
    double meters_per_unit = 1.0;
    std::string name;

    std::size_t size() const { return frames.size(); }
    bool has_poses() const { return !poses.empty(); }

    void validate() const {
        if (frames.empty()) throw Error("dataset '" + name + "' has no frames");
        if (has_poses() && poses.size() != frames.size()) {
            throw Error("dataset '" + name + "': " + std::to_string(frames.size()) + " frames but " +
                        std::to_string(poses.size()) + " poses");
        }
        for (const auto& f : frames) {
            if (f.image.rank() != 4 || f.image.dim(2) != intrinsics.height || f.image.dim(3) != intrinsics.width) {
                throw ShapeError("dataset '" + name + "': frame size does not match intrinsics");
            }
        }
    }
};

/// Renders one frame per trajectory entry (camera-to-world Euler poses).
/// `seed` offsets the scene's texture seed so one config yields many scenes.
inline SequenceDataset generate_sequence(SceneConfig scene_cfg, const std::vector<PoseVec6>& trajectory, std::uint64_t seed = 0) {
    scene_cfg.texture_seed += seed;
    const Scene scene(scene_cfg);
    SequenceDataset ds;
    ds.intrinsics = scene_cfg.intrinsics;
    ds.name = "synthetic";
    for (const auto& p : trajectory) {
        const SE3Transform T = geom::pose_from_params(p);
        auto view = render(scene, T);
        ds.frames.push_back({std::move(view.image), std::move(view.depth)});
        ds.poses.push_back(T);
    }
    return ds;
}

/// Smooth camera path for synthetic sequences: constant velocity plus
/// sinusoidal wobble in translation and yaw/pitch.
struct TrajectoryConfig {
    std::size_t frames = 20;
    Vec3 velocity{0.1, 0, 0};   // units per frame
    double wobble = 0.0;        // translation wobble amplitude (units)
    double rotation_wobble = 0.0;  // rad
    double period = 25;         // frames
    std::uint64_t seed = 0;     // phase of the wobble
};

inline std::vector<PoseVec6> make_trajectory(const TrajectoryConfig& c) {
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> ph(0, 2 * std::numbers::pi);
    const double p0 = ph(rng), p1 = ph(rng), p2 = ph(rng), p3 = ph(rng);
    std::vector<PoseVec6> out;
    for (std::size_t k = 0; k < c.frames; ++k) {
        const double s = 2 * std::numbers::pi * double(k) / c.period;
        const Vec3 t = double(k) * c.velocity +
                       c.wobble * Vec3(std::sin(s + p0), std::sin(0.7 * s + p1), 0.5 * std::sin(1.3 * s + p2));
        const Vec3 r(0.5 * c.rotation_wobble * std::sin(0.9 * s + p3), c.rotation_wobble * std::sin(s + p1), 0);
        out.emplace_back(t, r);
    }
    return out;
}

inline void to_json(nlohmann::json& j, const TrajectoryConfig& c) {
    j = {{"frames", c.frames}, {"velocity", {c.velocity.x(), c.velocity.y(), c.velocity.z()}}, {"wobble", c.wobble},
         {"rotation_wobble", c.rotation_wobble}, {"period", c.period}, {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, TrajectoryConfig& c) {
    check_keys(j, {"frames", "velocity", "wobble", "rotation_wobble", "period", "seed"}, "trajectory");
    c.frames = j.value("frames", c.frames);
    if (j.contains("velocity")) {
        const auto v = j.at("velocity").get<std::vector<double>>();
        if (v.size() != 3) throw Error("trajectory velocity needs 3 components");
        c.velocity = Vec3(v[0], v[1], v[2]);
    }
    c.wobble = j.value("wobble", c.wobble);
    c.rotation_wobble = j.value("rotation_wobble", c.rotation_wobble);
    c.period = j.value("period", c.period);
    c.seed = j.value("seed", c.seed);
    if (c.frames == 0 || !(c.period > 0)) throw Error("trajectory needs frames > 0 and period > 0");
}

enum class Context { two_source, one_source };

/// Target frame with its temporal neighbours. gt_relative[i] is
/// invert(T_target) ∘ T_source[i]: the source camera's pose in the target
/// frame. The warp needs the inverse, see gt_warp_pose.
struct Snippet {
    Frame target;
    std::vector<Frame> sources;
    std::vector<SE3Transform> gt_relative;
    CameraIntrinsics intrinsics;
    std::size_t target_index = 0;
    std::vector<std::size_t> source_indices;

    bool has_gt_poses() const { return !gt_relative.empty(); }
    std::vector<diff::Tensor> source_images() const {
        std::vector<diff::Tensor> out;
        for (const auto& f : sources) out.push_back(f.image);
        return out;
    }
    /// Target-to-source motion x_{t->s} for synthesize_view.
    PoseVec6 gt_warp_pose(std::size_t i) const { return geom::params_from_pose(geom::invert(gt_relative.at(i))); }
};

inline Snippet make_snippet(const SequenceDataset& ds, std::size_t target, const std::vector<std::size_t>& sources) {
    Snippet s;
    s.target = ds.frames.at(target);
    s.intrinsics = ds.intrinsics;
    s.target_index = target;
    s.source_indices = sources;
    for (auto i : sources) {
        s.sources.push_back(ds.frames.at(i));
        if (ds.has_poses()) s.gt_relative.push_back(geom::compose(geom::invert(ds.poses[target]), ds.poses[i]));
    }
    return s;
}

/// two_source: (t-1, t, t+1) with t-1 listed first; one_source: (t, t+1).
/// Consecutive targets are `stride` frames apart.
inline std::vector<Snippet> snippets(const SequenceDataset& ds, Context context = Context::two_source, std::size_t stride = 1) {
    if (stride == 0) throw Error("snippets: stride must be >= 1");
    std::vector<Snippet> out;
    if (context == Context::two_source) {
        for (std::size_t t = 1; t + 1 < ds.size(); t += stride) out.push_back(make_snippet(ds, t, {t - 1, t + 1}));
    } else {
        for (std::size_t t = 0; t + 1 < ds.size(); t += stride) out.push_back(make_snippet(ds, t, {t + 1}));
    }
    return out;
}

/// Resamples every frame (and depth) to (h, w) and rescales intrinsics.
inline SequenceDataset resized(const SequenceDataset& ds, std::size_t h, std::size_t w) {
    SequenceDataset out = ds;
    if (ds.intrinsics.height == h && ds.intrinsics.width == w) return out;
    out.intrinsics = ds.intrinsics.resized(w, h);
    for (auto& f : out.frames) {
        f.image = diff::resize_bilinear(f.image.detach(), h, w).detach();
        if (f.depth) f.depth = diff::resize_bilinear(f.depth->detach(), h, w).detach();
    }
    return out;
}

struct WarpResidual {
    double mean = 0, max = 0;  // per-pair mean absolute error over valid pixels
    std::size_t pairs = 0;
};

/// Reconstruction error of every (target, source) pair of `two_source`
/// snippets when warping with ground-truth depth and poses.
inline WarpResidual gt_warp_residual(const SequenceDataset& ds) {
    WarpResidual r;
    for (const auto& s : snippets(ds, Context::two_source)) {
        if (!s.target.depth || !s.has_gt_poses()) throw Error("gt_warp_residual: dataset lacks GT depth or poses");
        for (std::size_t i = 0; i < s.sources.size(); ++i) {
            const auto view = geom::synthesize_view(s.sources[i].image, *s.target.depth, s.gt_warp_pose(i), s.intrinsics);
            const std::size_t plane = view.valid.size(), c = s.target.image.dim(1);
            double acc = 0;
            std::size_t n = 0;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t p = 0; p < plane; ++p)
                    if (view.valid[p]) {
                        acc += std::abs(view.image[ch * plane + p] - s.target.image[ch * plane + p]);
                        ++n;
                    }
            const double mae = n ? acc / double(n) : 0.0;
            r.mean += mae;
            r.max = std::max(r.max, mae);
            ++r.pairs;
        }
    }
    if (r.pairs) r.mean /= double(r.pairs);
    return r;
}

}  // namespace egolab::synth
