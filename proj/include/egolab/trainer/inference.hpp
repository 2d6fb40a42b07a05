#pragma once

// Network inference over a sequence: consecutive-pair poses stacked into a
// trajectory, and depth maps for evaluation.

#include "egolab/odomeval/metrics.hpp"
#include "egolab/trainer/train.hpp"

namespace egolab::train {

/// Warp motions x_{k->k+1} predicted for every consecutive frame pair.
inline std::vector<geom::SE3Transform> predict_relatives(const Model& m, const synth::SequenceDataset& ds) {
    if (ds.size() < 2) throw Error("predict_relatives: need at least two frames");
    const ParamSet dps = frozen(m.depth), pps = frozen(m.pose);
    std::vector<Tensor> dn;
    for (const auto& f : ds.frames) dn.push_back(net::normalize_depth_for_pose(net::depth_forward(dps, m.depth_cfg, f.image)[0]));
    std::vector<geom::SE3Transform> out;
    for (std::size_t k = 0; k + 1 < ds.size(); ++k) {
        const Tensor p = net::pose_forward(pps, m.pose_cfg, ds.frames[k].image, dn[k], ds.frames[k + 1].image, dn[k + 1]);
        out.push_back(geom::pose_from_params(net::to_pose_vec(p)));
    }
    return out;
}

inline eval::Trajectory predict_trajectory(const Model& m, const synth::SequenceDataset& ds) {
    return eval::stack_trajectory(predict_relatives(m, ds));
}

/// Ground-truth trajectory re-expressed relative to the first frame.
inline eval::Trajectory gt_trajectory(const synth::SequenceDataset& ds) {
    if (!ds.has_poses()) throw Error("dataset has no ground-truth poses");
    const auto inv0 = geom::invert(ds.poses.front());
    std::vector<geom::SE3Transform> p;
    for (const auto& T : ds.poses) p.push_back(geom::compose(inv0, T));
    return eval::Trajectory::from_poses(std::move(p));
}

/// Finest-scale depth per frame, flattened.
inline std::vector<std::vector<Real>> predict_depths(const Model& m, const synth::SequenceDataset& ds) {
    const ParamSet dps = frozen(m.depth);
    std::vector<std::vector<Real>> out;
    for (const auto& f : ds.frames) out.push_back(net::depth_forward(dps, m.depth_cfg, f.image)[0].data());
    return out;
}

}  // namespace egolab::train
