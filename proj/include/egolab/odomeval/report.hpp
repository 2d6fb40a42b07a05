#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>

#include <nlohmann/json.hpp>

#include "egolab/odomeval/metrics.hpp"

namespace egolab::eval {

inline constexpr int kReportVersion = 1;

struct MetricsReport {
    AteResult ate;
    DriftResult drift;
    std::optional<DepthReport> depth;
    std::string align = "snippet";
    std::size_t snippet_len = 5;
    double meters_per_unit = 1.0;
    double global_scale = 1.0;  // set when align == "global"

    void validate() const {
        const double vals[] = {ate.mean, ate.std, drift.t_rel, drift.r_rel};
        for (double v : vals) {
            if (!std::isfinite(v) || v < 0) throw NumericError("metrics report: metric is negative or not finite");
        }
    }
};

inline void to_json(nlohmann::json& j, const DepthReport& d) {
    j = {{"abs_rel", d.abs_rel}, {"sq_rel", d.sq_rel}, {"rmse", d.rmse}, {"rmse_log", d.rmse_log},
         {"delta1", d.delta1}, {"pixels", d.pixels}, {"images", d.images}};
}

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& l : r.drift.per_length) {
        per.push_back({{"length_m", l.length}, {"t_err_pct", l.t_err}, {"r_err_deg_per_100m", l.r_err}, {"count", l.count}});
    }
    j = {{"version", kReportVersion},
         {"align", r.align},
         {"snippet_len", r.snippet_len},
         {"meters_per_unit", r.meters_per_unit},
         {"global_scale", r.global_scale},
         {"ate", {{"mean", r.ate.mean}, {"std", r.ate.std}, {"snippets", r.ate.snippets}, {"skipped", r.ate.skipped}}},
         {"drift",
          {{"sufficient_length", r.drift.sufficient},
           {"t_rel_pct", r.drift.t_rel},
           {"r_rel_deg_per_100m", r.drift.r_rel},
           {"pairs", r.drift.pairs},
           {"per_length", per}}},
         {"depth", r.depth ? nlohmann::json(*r.depth) : nlohmann::json(nullptr)}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("write failed: " + path.string());
}

inline void write_report_json(const MetricsReport& r, const std::filesystem::path& path) {
    r.validate();
    write_text(path, nlohmann::json(r).dump(2) + "\n");
}

inline std::string per_length_csv(const DriftResult& d) {
    std::ostringstream s;
    s << std::setprecision(10) << "length_m,t_err_pct,r_err_deg_per_100m,count\n";
    for (const auto& l : d.per_length) s << l.length << ',' << l.t_err << ',' << l.r_err << ',' << l.count << '\n';
    return s.str();
}

/// Positions of both trajectories, one row per frame.
inline std::string trajectory_csv(const Trajectory& pred, const Trajectory& gt) {
    detail::require_same_length(pred, gt, "trajectory_csv");
    std::ostringstream s;
    s << std::setprecision(12) << "frame,pred_x,pred_y,pred_z,gt_x,gt_y,gt_z\n";
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Vec3 p = pred.poses[i].translation(), g = gt.poses[i].translation();
        s << pred.indices[i] << ',' << p.x() << ',' << p.y() << ',' << p.z() << ',' << g.x() << ',' << g.y() << ',' << g.z()
          << '\n';
    }
    return s.str();
}

}  // namespace egolab::eval
