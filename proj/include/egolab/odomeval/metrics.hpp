#pragma once

// Odometry and depth evaluation: trajectory stacking, scale alignment,
// snippet ATE, KITTI-style relative drift and the standard depth metrics.

#include <numbers>
#include <optional>

#include "egolab/diffcore/tensor.hpp"
#include "egolab/geometry/pose.hpp"

namespace egolab::eval {

using geom::SE3Transform;
using geom::Vec3;

struct Trajectory {
    std::vector<SE3Transform> poses;  // camera-to-world, poses[0] usually identity
    std::vector<std::size_t> indices;  // frame index of every pose

    std::size_t size() const { return poses.size(); }

    static Trajectory from_poses(std::vector<SE3Transform> poses) {
        Trajectory t;
        t.indices.resize(poses.size());
        std::iota(t.indices.begin(), t.indices.end(), std::size_t{0});
        t.poses = std::move(poses);
        return t;
    }
};

/// Stacks frame-to-frame warp motions x_{k->k+1} (target-camera points into
/// the next camera) into absolute camera poses: T_0 = I and
/// T_{k+1} = T_k ∘ invert(x_{k->k+1}).
inline Trajectory stack_trajectory(const std::vector<SE3Transform>& relatives) {
    if (relatives.empty()) throw Error("stack_trajectory: need at least one relative pose");
    std::vector<SE3Transform> poses{SE3Transform()};
    for (const auto& x : relatives) poses.push_back(geom::compose(poses.back(), geom::invert(x)));
    return Trajectory::from_poses(std::move(poses));
}

/// Inverse of stack_trajectory: x_{k->k+1} = invert(T_{k+1}) ∘ T_k.
inline std::vector<SE3Transform> warp_relatives(const Trajectory& t) {
    std::vector<SE3Transform> out;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) out.push_back(geom::compose(geom::invert(t.poses[k + 1]), t.poses[k]));
    return out;
}

/// Camera motion between consecutive frames: invert(T_k) ∘ T_{k+1}.
inline std::vector<SE3Transform> camera_motions(const Trajectory& t) {
    std::vector<SE3Transform> out;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) out.push_back(geom::compose(geom::invert(t.poses[k]), t.poses[k + 1]));
    return out;
}

/// Re-stacks camera motions from `start`.
inline Trajectory restack(const std::vector<SE3Transform>& motions, const SE3Transform& start = {}) {
    std::vector<SE3Transform> poses{start};
    for (const auto& m : motions) poses.push_back(geom::compose(poses.back(), m));
    return Trajectory::from_poses(std::move(poses));
}

namespace detail {
inline void require_same_length(const Trajectory& a, const Trajectory& b, const char* what) {
    if (a.size() != b.size()) {
        throw Error(std::string(what) + ": trajectory lengths differ (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
    }
}
}  // namespace detail

/// Per-window scale correction: frames are cut into consecutive windows of
/// `window` frames (window - 1 motions, the last window may be shorter); each
/// window's predicted translations are multiplied by
/// (GT path length) / (predicted path length) over that window.
inline Trajectory snippet_scale_align(const Trajectory& pred, const Trajectory& gt, std::size_t window = 5,
                                      std::vector<double>* scales = nullptr) {
    detail::require_same_length(pred, gt, "snippet_scale_align");
    if (window < 2) throw Error("snippet_scale_align: window must be >= 2");
    auto pm = camera_motions(pred);
    const auto gm = camera_motions(gt);
    const std::size_t per = window - 1;
    for (std::size_t start = 0; start < pm.size(); start += per) {
        const std::size_t end = std::min(start + per, pm.size());
        double lp = 0, lg = 0;
        for (std::size_t k = start; k < end; ++k) {
            lp += pm[k].translation().norm();
            lg += gm[k].translation().norm();
        }
        if (lp < 1e-9) {
            throw Error("snippet_scale_align: degenerate window at frame " + std::to_string(start) +
                        " (predicted path length " + std::to_string(lp) + ")");
        }
        const double s = lg / lp;
        if (scales) scales->push_back(s);
        for (std::size_t k = start; k < end; ++k) pm[k] = SE3Transform(pm[k].rotation(), s * pm[k].translation());
    }
    return restack(pm, pred.poses.front());
}

/// Single least-squares scalar over absolute positions, applied to every
/// predicted translation.
inline std::pair<Trajectory, double> global_scale_align(const Trajectory& pred, const Trajectory& gt) {
    detail::require_same_length(pred, gt, "global_scale_align");
    double num = 0, den = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        num += pred.poses[i].translation().dot(gt.poses[i].translation());
        den += pred.poses[i].translation().squaredNorm();
    }
    if (den == 0) throw Error("global_scale_align: all predicted positions are zero");
    const double s = num / den;
    Trajectory out = pred;
    for (auto& p : out.poses) p = SE3Transform(p.rotation(), s * p.translation());
    return {out, s};
}

struct AteResult {
    double mean = 0, std = 0;
    std::size_t snippets = 0;
    std::size_t skipped = 0;  // zero-motion snippets
};

/// ATE over all overlapping snippets of `snippet_len` frames: both pieces
/// are re-expressed relative to their first frame, the prediction is scaled
/// by the least-squares scalar on positions, and the RMSE of the position
/// differences is averaged.
inline AteResult ate_snippets(const Trajectory& pred, const Trajectory& gt, std::size_t snippet_len = 5) {
    detail::require_same_length(pred, gt, "ate_snippets");
    if (snippet_len < 2) throw Error("ate_snippets: snippet_len must be >= 2");
    if (pred.size() < snippet_len) throw Error("ate_snippets: trajectory shorter than one snippet");
    AteResult r;
    std::vector<double> errs;
    for (std::size_t i = 0; i + snippet_len <= pred.size(); ++i) {
        const SE3Transform ip = geom::invert(pred.poses[i]), ig = geom::invert(gt.poses[i]);
        std::vector<Vec3> p, g;
        double num = 0, den = 0, gnorm = 0;
        for (std::size_t j = i; j < i + snippet_len; ++j) {
            p.push_back(geom::compose(ip, pred.poses[j]).translation());
            g.push_back(geom::compose(ig, gt.poses[j]).translation());
            num += p.back().dot(g.back());
            den += p.back().squaredNorm();
            gnorm += g.back().squaredNorm();
        }
        if (den < 1e-18 || gnorm < 1e-18) {
            ++r.skipped;
            continue;
        }
        const double s = num / den;
        double se = 0;
        for (std::size_t k = 0; k < p.size(); ++k) se += (s * p[k] - g[k]).squaredNorm();
        errs.push_back(std::sqrt(se / double(p.size())));
    }
    r.snippets = errs.size();
    if (errs.empty()) return r;
    for (double e : errs) r.mean += e / double(errs.size());
    for (double e : errs) r.std += (e - r.mean) * (e - r.mean) / double(errs.size());
    r.std = std::sqrt(r.std);
    return r;
}

struct LengthDrift {
    double length = 0;  // meters
    double t_err = 0;   // percent
    double r_err = 0;   // deg / 100 m
    std::size_t count = 0;
};

struct DriftResult {
    bool sufficient = false;  // some subsequence reached the shortest length
    double t_rel = 0;         // percent
    double r_rel = 0;         // deg / 100 m
    std::vector<LengthDrift> per_length;
    std::size_t pairs = 0;
};

inline const std::vector<double>& kitti_lengths() {
    static const std::vector<double> l{100, 200, 300, 400, 500, 600, 700, 800};
    return l;
}

/// KITTI odometry drift. Every `step`-th frame starts subsequences of GT
/// path length L (meters, trajectory units times meters_per_unit); the
/// error pose invert(rel_gt) ∘ rel_pred gives translational error ‖t‖ / L and
/// rotational error angle / L, averaged over all (start, L) pairs.
inline DriftResult rel_drift(const Trajectory& pred, const Trajectory& gt, const std::vector<double>& lengths = kitti_lengths(),
                             std::size_t step = 10, double meters_per_unit = 1.0) {
    detail::require_same_length(pred, gt, "rel_drift");
    if (step == 0) throw Error("rel_drift: step must be >= 1");
    if (!(meters_per_unit > 0)) throw Error("rel_drift: meters_per_unit must be > 0");
    std::vector<double> dist{0.0};
    for (std::size_t i = 1; i < gt.size(); ++i) {
        dist.push_back(dist.back() + meters_per_unit * (gt.poses[i].translation() - gt.poses[i - 1].translation()).norm());
    }
    DriftResult r;
    double t_sum = 0, r_sum = 0;
    for (double L : lengths) r.per_length.push_back({L, 0, 0, 0});
    for (std::size_t first = 0; first < gt.size(); first += step) {
        for (std::size_t li = 0; li < lengths.size(); ++li) {
            const double L = lengths[li];
            std::size_t last = first;
            while (last < gt.size() && dist[last] < dist[first] + L) ++last;
            if (last >= gt.size()) continue;
            const SE3Transform dg = geom::compose(geom::invert(gt.poses[first]), gt.poses[last]);
            const SE3Transform dp = geom::compose(geom::invert(pred.poses[first]), pred.poses[last]);
            const SE3Transform e = geom::compose(geom::invert(dg), dp);
            const double te = meters_per_unit * e.translation().norm() / L;
            const double re = geom::rotation_angle(e.rotation()) / L;
            t_sum += te;
            r_sum += re;
            ++r.pairs;
            auto& pl = r.per_length[li];
            pl.t_err += te;
            pl.r_err += re;
            ++pl.count;
        }
    }
    const double to_deg100 = 180.0 / std::numbers::pi * 100.0;
    for (auto& pl : r.per_length) {
        if (pl.count == 0) continue;
        pl.t_err = 100.0 * pl.t_err / double(pl.count);
        pl.r_err = to_deg100 * pl.r_err / double(pl.count);
    }
    r.sufficient = r.pairs > 0;
    if (r.sufficient) {
        r.t_rel = 100.0 * t_sum / double(r.pairs);
        r.r_rel = to_deg100 * r_sum / double(r.pairs);
    }
    return r;
}

struct DepthReport {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, delta1 = 0;
    std::size_t pixels = 0;
    std::size_t images = 0;
};

namespace detail {
inline double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::nth_element(v.begin(), v.begin() + std::ptrdiff_t(n / 2), v.end());
    const double hi = v[n / 2];
    if (n % 2) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + std::ptrdiff_t(n / 2)));
}
}  // namespace detail

/// Median-scaled depth metrics over pixels whose GT lies in [min_d, max_d].
inline DepthReport depth_metrics(const std::vector<Real>& pred, const std::vector<Real>& gt, double min_d, double max_d) {
    if (pred.size() != gt.size()) throw ShapeError("depth_metrics: prediction and GT sizes differ");
    std::vector<double> p, g;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] >= min_d && gt[i] <= max_d && pred[i] > 0) {
            p.push_back(pred[i]);
            g.push_back(gt[i]);
        }
    }
    if (g.empty()) throw Error("depth_metrics: no pixel has ground truth inside [min_d, max_d]");
    const double ratio = detail::median(g) / detail::median(p);
    DepthReport r;
    r.pixels = g.size();
    r.images = 1;
    const double n = double(g.size());
    std::size_t good = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double pi = p[i] * ratio, gi = g[i];
        const double d = pi - gi;
        r.abs_rel += std::abs(d) / gi / n;
        r.sq_rel += d * d / gi / n;
        r.rmse += d * d / n;
        r.rmse_log += std::pow(std::log(pi) - std::log(gi), 2) / n;
        good += std::max(pi / gi, gi / pi) < 1.25;
    }
    r.rmse = std::sqrt(r.rmse);
    r.rmse_log = std::sqrt(r.rmse_log);
    r.delta1 = double(good) / n;
    return r;
}

/// Per-image metrics averaged over images.
inline DepthReport depth_metrics(const std::vector<std::vector<Real>>& preds, const std::vector<std::vector<Real>>& gts,
                                 double min_d, double max_d) {
    if (preds.size() != gts.size() || preds.empty()) throw Error("depth_metrics: need matching, non-empty image lists");
    DepthReport acc;
    const double n = double(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto r = depth_metrics(preds[i], gts[i], min_d, max_d);
        acc.abs_rel += r.abs_rel / n;
        acc.sq_rel += r.sq_rel / n;
        acc.rmse += r.rmse / n;
        acc.rmse_log += r.rmse_log / n;
        acc.delta1 += r.delta1 / n;
        acc.pixels += r.pixels;
    }
    acc.images = preds.size();
    return acc;
}

}  // namespace egolab::eval
