#pragma once

// The four commands behind the egolab tool: synth, train, eval, ablate.
// Each writes its artifacts plus one manifest.json into the output
// directory.

#include <chrono>
#include <ctime>
#include <iostream>

#include "egolab/cli/config.hpp"
#include "egolab/cli/svg.hpp"
#include "egolab/odomeval/report.hpp"
#include "egolab/synthdata/io.hpp"
#include "egolab/trainer/checkpoint.hpp"
#include "egolab/trainer/inference.hpp"

#ifndef EGOLAB_BUILD_ID
#define EGOLAB_BUILD_ID "unknown"
#endif

namespace egolab::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Collects what one command did and writes it as manifest.json.
class Manifest {
public:
    Manifest(std::string command, nlohmann::json config, std::uint64_t seed)
        : command_(std::move(command)), config_(std::move(config)), seed_(seed), start_(std::chrono::steady_clock::now()) {
        const std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        started_ = buf;
    }

    void input(const std::string& role, const fs::path& p) { inputs_[role] = p.string(); }
    void artifact(const fs::path& p) { artifacts_.push_back(p.string()); }
    void set(const std::string& key, nlohmann::json v) { extra_[key] = std::move(v); }
    void set_argv(std::vector<std::string> argv) { argv_ = std::move(argv); }

    nlohmann::json json() const {
        return {{"command", command_},
                {"argv", argv_},
                {"config", config_},
                {"seed", seed_},
                {"inputs", inputs_},
                {"artifacts", artifacts_},
                {"wall_clock_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
                {"started_utc", started_},
                {"build", {{"version", kVersion}, {"id", EGOLAB_BUILD_ID}, {"compiler", __VERSION__}}},
                {"results", extra_}};
    }

    fs::path write(const fs::path& out_dir) const {
        const auto p = out_dir / "manifest.json";
        eval::write_text(p, json().dump(2) + "\n");
        return p;
    }

private:
    std::string command_;
    nlohmann::json config_;
    std::uint64_t seed_;
    std::chrono::steady_clock::time_point start_;
    std::string started_;
    std::vector<std::string> argv_;
    nlohmann::json inputs_ = nlohmann::json::object();
    std::vector<std::string> artifacts_;
    nlohmann::json extra_ = nlohmann::json::object();
};

inline void ensure_writable(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    const auto probe = dir / ".egolab_write_probe";
    std::ofstream f(probe);
    if (ec || !f) throw Error("output directory '" + dir.string() + "' is not writable");
    f.close();
    fs::remove(probe);
}

inline void require_finite(double v, const std::string& what) {
    if (!std::isfinite(v)) throw NumericError(what + " is not finite");
}

// ---- synth -------------------------------------------------------------------

inline synth::SequenceDataset generate(const SynthSection& s, std::size_t frames, std::uint64_t offset = 0) {
    auto tc = s.trajectory;
    tc.frames = frames;
    tc.seed += offset;
    auto ds = synth::generate_sequence(s.scene, synth::make_trajectory(tc), s.seed + offset);
    ds.meters_per_unit = s.meters_per_unit;
    ds.name = s.name;
    return ds;
}

struct SynthResult {
    synth::SequenceDataset dataset;
    synth::WarpResidual residual;  // on the in-memory float renders
};

inline SynthResult cmd_synth(const Config& cfg, const fs::path& out, Manifest& m) {
    ensure_writable(out);
    SynthResult r{generate(cfg.synth, cfg.synth.trajectory.frames), {}};
    r.residual = synth::gt_warp_residual(r.dataset);
    const nlohmann::json meta = {{"generator", nlohmann::json(cfg.synth)},
                                 {"gt_warp_residual", {{"mean", r.residual.mean}, {"max", r.residual.max}, {"pairs", r.residual.pairs}}}};
    synth::save_dataset(r.dataset, out.string(), meta);
    for (const char* a : {"frames", "depth", "poses.txt", "intrinsics.json", "meta.json"}) m.artifact(out / a);
    m.set("gt_warp_residual_mean", r.residual.mean);
    m.set("gt_warp_residual_max", r.residual.max);
    m.set("frames", r.dataset.size());
    m.write(out);
    return r;
}

// ---- train -------------------------------------------------------------------

/// Dataset at the depth network's input size (frames are resampled when needed).
inline synth::SequenceDataset fit_to_model(const synth::SequenceDataset& ds, const net::DepthNetConfig& dc) {
    if (ds.intrinsics.height == dc.height && ds.intrinsics.width == dc.width) return ds;
    return synth::resized(ds, dc.height, dc.width);
}

inline std::string loss_csv(const std::vector<train::EpochLog>& h) {
    std::ostringstream s;
    s << std::setprecision(10) << "epoch,total,photometric,smoothness,masked_fraction,lr_depth,lr_pose\n";
    for (const auto& e : h) {
        s << e.epoch << ',' << e.total << ',' << e.photometric << ',' << e.smoothness << ',' << e.masked_fraction << ',' << e.lr_depth << ','
          << e.lr_pose << '\n';
    }
    return s.str();
}

inline std::string loss_svg(const std::vector<train::EpochLog>& h) {
    svg::Plot p{"Training loss", "epoch", "loss", {}};
    svg::Series total{"total", {}, {}, svg::palette(0)}, photo{"photometric", {}, {}, svg::palette(1), true};
    for (const auto& e : h) {
        total.x.push_back(double(e.epoch));
        total.y.push_back(e.total);
        photo.x.push_back(double(e.epoch));
        photo.y.push_back(e.photometric);
    }
    p.series = {total, photo};
    return svg::render(p);
}

struct TrainResult {
    std::vector<train::EpochLog> history;
    fs::path checkpoint;
    train::Model model;
};

/// Trains (or continues from `resume_from`) and writes checkpoint.bin,
/// loss.csv and loss.svg after every epoch.
inline TrainResult cmd_train(const Config& cfg, const fs::path& data_dir, const fs::path& out, Manifest& m,
                             const std::optional<fs::path>& resume_from = std::nullopt, std::ostream* progress = nullptr) {
    ensure_writable(out);
    const auto raw = synth::load_dataset(data_dir.string());
    std::optional<train::Trainer> t;
    if (resume_from) {
        auto ck = train::load_checkpoint(*resume_from);
        if (!cfg.source.empty()) ck.config.epochs = std::max(ck.config.epochs, cfg.train.epochs);
        t.emplace(train::resume(ck, fit_to_model(raw, ck.config.depth_net)));
        m.input("resume", *resume_from);
    } else {
        t.emplace(cfg.train, fit_to_model(raw, cfg.train.depth_net));
    }
    m.input("data", data_dir);
    const auto ck_path = out / "checkpoint.bin", csv = out / "loss.csv", plot = out / "loss.svg";
    auto flush = [&] {
        train::save_checkpoint(train::Checkpoint::capture(*t), ck_path);
        eval::write_text(csv, loss_csv(t->history()));
        eval::write_text(plot, loss_svg(t->history()));
    };
    t->run([&](const train::EpochLog& e) {
        require_finite(e.total, "epoch " + std::to_string(e.epoch) + " loss");
        if (progress) {
            *progress << "epoch " << e.epoch << "  total " << e.total << "  photometric " << e.photometric << "  smoothness " << e.smoothness
                      << "  masked " << e.masked_fraction << std::endl;
        }
        flush();
    });
    if (!fs::exists(ck_path)) flush();  // resumed past the last epoch already
    for (const auto& p : {ck_path, csv, plot}) m.artifact(p);
    m.set("epochs_completed", t->epoch());
    if (!t->history().empty()) m.set("final_loss", t->history().back().total);
    m.write(out);
    return {t->history(), ck_path, t->model().deep_copy()};
}

// ---- eval --------------------------------------------------------------------

inline bool is_checkpoint(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    char magic[8] = {};
    f.read(magic, 8);
    return f && std::equal(magic, magic + 8, train::kCheckpointMagic);
}

struct Evaluation {
    eval::MetricsReport report;
    eval::Trajectory pred, aligned, gt;
};

/// Protocol shared by eval and ablate: align, then snippet ATE on the raw
/// prediction and drift on the aligned one.
inline Evaluation evaluate(const eval::Trajectory& pred, const eval::Trajectory& gt, const EvalSection& e, double meters_per_unit) {
    if (pred.size() != gt.size()) {
        throw Error("trajectory/GT length mismatch: " + std::to_string(pred.size()) + " predicted poses vs " + std::to_string(gt.size()) +
                    " ground-truth poses");
    }
    Evaluation ev{{}, pred, pred, gt};
    ev.report.align = e.align;
    ev.report.snippet_len = e.snippet_len;
    ev.report.meters_per_unit = meters_per_unit;
    if (e.align == "snippet") {
        ev.aligned = eval::snippet_scale_align(pred, gt, e.window);
    } else {
        std::tie(ev.aligned, ev.report.global_scale) = eval::global_scale_align(pred, gt);
    }
    ev.report.ate = eval::ate_snippets(pred, gt, e.snippet_len);
    ev.report.drift = eval::rel_drift(ev.aligned, gt, e.lengths, e.step, meters_per_unit);
    return ev;
}

inline std::string trajectory_svg(const Evaluation& ev) {
    svg::Plot p{"Top-down trajectory (" + ev.report.align + " alignment)", "x", "z", {}, true};
    svg::Series g{"ground truth", {}, {}, "#222222"}, q{"prediction", {}, {}, svg::palette(1), true};
    for (std::size_t i = 0; i < ev.gt.size(); ++i) {
        g.x.push_back(ev.gt.poses[i].translation().x());
        g.y.push_back(ev.gt.poses[i].translation().z());
        q.x.push_back(ev.aligned.poses[i].translation().x());
        q.y.push_back(ev.aligned.poses[i].translation().z());
    }
    p.series = {g, q};
    return svg::render(p);
}

/// Evaluates a checkpoint (network inference over consecutive pairs) or a
/// KITTI pose file against the dataset's ground truth.
inline Evaluation cmd_eval(const Config& cfg, const fs::path& prediction, const fs::path& data_dir, const fs::path& out, Manifest& m,
                           std::ostream* progress = nullptr) {
    ensure_writable(out);
    cfg.eval.validate();
    const auto ds = synth::load_dataset(data_dir.string());
    const auto gt = train::gt_trajectory(ds);
    eval::Trajectory pred;
    std::optional<eval::DepthReport> depth;
    if (is_checkpoint(prediction)) {
        const auto ck = train::load_checkpoint(prediction);
        const auto fitted = fit_to_model(ds, ck.config.depth_net);
        pred = train::predict_trajectory(ck.model, fitted);
        bool has_depth = true;
        for (const auto& f : fitted.frames) has_depth = has_depth && f.depth.has_value();
        if (has_depth) {
            std::vector<std::vector<Real>> gts;
            for (const auto& f : fitted.frames) gts.push_back(f.depth->data());
            depth = eval::depth_metrics(train::predict_depths(ck.model, fitted), gts, cfg.eval.min_depth, cfg.eval.max_depth);
        }
    } else {
        const auto poses = synth::read_poses(prediction.string());
        if (poses.empty()) throw Error("pose file '" + prediction.string() + "' is empty");
        const auto inv0 = geom::invert(poses.front());
        std::vector<geom::SE3Transform> rel;
        for (const auto& T : poses) rel.push_back(geom::compose(inv0, T));
        pred = eval::Trajectory::from_poses(std::move(rel));
    }
    m.input("prediction", prediction);
    m.input("data", data_dir);
    const double mpu = cfg.eval.meters_per_unit.value_or(ds.meters_per_unit);
    auto ev = evaluate(pred, gt, cfg.eval, mpu);
    ev.report.depth = depth;
    if (!ev.report.drift.sufficient && progress) {
        *progress << "warning: no subsequence reaches " << cfg.eval.lengths.front()
                  << " m; drift metrics are reported as insufficient (set eval.meters_per_unit)\n";
    }
    const auto json_path = out / "metrics.json", per_len = out / "per_length.csv", traj = out / "trajectory.csv",
               plot = out / "trajectory.svg", poses_out = out / "poses_pred.txt";
    eval::write_report_json(ev.report, json_path);
    eval::write_text(per_len, eval::per_length_csv(ev.report.drift));
    eval::write_text(traj, eval::trajectory_csv(ev.aligned, gt));
    eval::write_text(plot, trajectory_svg(ev));
    synth::write_poses(poses_out.string(), ev.pred.poses);
    for (const auto& p : {json_path, per_len, traj, plot, poses_out}) m.artifact(p);
    m.set("metrics", nlohmann::json(ev.report));
    m.write(out);
    return ev;
}

// ---- ablate ------------------------------------------------------------------

struct AblationRow {
    double coverage = 0;
    std::size_t patch = 0;
    std::uint64_t seed = 0;
    double final_loss = 0;
    double train_t_rel = 0, train_r_rel = 0, test_t_rel = 0, test_r_rel = 0;
};

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream s;
    s << std::setprecision(10) << "coverage,patch,seed,final_loss,train_t_rel,train_r_rel,test_t_rel,test_r_rel\n";
    for (const auto& r : rows) {
        s << r.coverage << ',' << r.patch << ',' << r.seed << ',' << r.final_loss << ',' << r.train_t_rel << ',' << r.train_r_rel << ','
          << r.test_t_rel << ',' << r.test_r_rel << '\n';
    }
    return s.str();
}

inline std::string ablation_svg(const std::vector<AblationRow>& rows, const std::vector<std::size_t>& patches,
                                const std::vector<double>& coverages) {
    svg::Plot p{"Augmentation sweep: t_rel vs coverage (solid: held-out, dashed: train)", "coverage", "t_rel (%)", {}};
    for (std::size_t k = 0; k < patches.size(); ++k) {
        svg::Series tr{"train, patch " + std::to_string(patches[k]), {}, {}, svg::palette(k), true, true};
        svg::Series te{"test, patch " + std::to_string(patches[k]), {}, {}, svg::palette(k), false, true};
        for (double c : coverages) {
            double a = 0, b = 0;
            std::size_t n = 0;
            for (const auto& r : rows) {
                if (r.patch == patches[k] && r.coverage == c) {
                    a += r.train_t_rel;
                    b += r.test_t_rel;
                    ++n;
                }
            }
            if (!n) continue;
            tr.x.push_back(c);
            tr.y.push_back(a / double(n));
            te.x.push_back(c);
            te.y.push_back(b / double(n));
        }
        p.series.push_back(tr);
        p.series.push_back(te);
    }
    return svg::render(p);
}

struct Splits {
    synth::SequenceDataset train, test;
};

inline Splits ablation_splits(const Config& cfg, const std::optional<fs::path>& data_dir) {
    if (data_dir) {
        const auto ds = synth::load_dataset(data_dir->string());
        const std::size_t cut = std::size_t(double(ds.size()) * cfg.ablate.train_fraction);
        if (cut < 3 || ds.size() - cut < 3) throw Error("ablate: dataset too small to split (" + std::to_string(ds.size()) + " frames)");
        Splits s{ds, ds};
        s.train.frames.assign(ds.frames.begin(), ds.frames.begin() + std::ptrdiff_t(cut));
        s.train.poses.assign(ds.poses.begin(), ds.poses.begin() + std::ptrdiff_t(cut));
        s.test.frames.assign(ds.frames.begin() + std::ptrdiff_t(cut), ds.frames.end());
        s.test.poses.assign(ds.poses.begin() + std::ptrdiff_t(cut), ds.poses.end());
        return s;
    }
    return {generate(cfg.synth, cfg.ablate.train_frames), generate(cfg.synth, cfg.ablate.test_frames, cfg.ablate.test_scene_offset)};
}

/// Trains one model per (seed, patch, coverage) cell on `train_ds` and
/// reports drift on it and on `test_ds`; both must match the net input size.
inline std::vector<AblationRow> ablation_rows(const Config& cfg, const synth::SequenceDataset& train_ds, const synth::SequenceDataset& test_ds,
                                              const std::vector<std::size_t>& patches, std::ostream* progress = nullptr) {
    const auto gt_train = train::gt_trajectory(train_ds), gt_test = train::gt_trajectory(test_ds);
    std::vector<AblationRow> rows;
    for (auto seed : cfg.ablate.seeds) {
        for (auto patch : patches) {
            for (double cov : cfg.ablate.coverages) {
                auto tc = cfg.train;
                tc.seed = seed;
                tc.augment = {.coverage = cov, .patch_side = patch, .apply_to_depth = cfg.train.augment.apply_to_depth, .enabled = cov > 0};
                train::Trainer t(tc, train_ds);
                t.run();
                AblationRow r{cov, patch, seed, t.history().back().total};
                const auto a = evaluate(train::predict_trajectory(t.model(), train_ds), gt_train, cfg.eval, train_ds.meters_per_unit);
                const auto b = evaluate(train::predict_trajectory(t.model(), test_ds), gt_test, cfg.eval, test_ds.meters_per_unit);
                if (!a.report.drift.sufficient || !b.report.drift.sufficient) {
                    throw Error("ablate: a split is shorter than " + std::to_string(cfg.eval.lengths.front()) +
                                " m of path; raise synth.meters_per_unit or the split sizes");
                }
                r.train_t_rel = a.report.drift.t_rel;
                r.train_r_rel = a.report.drift.r_rel;
                r.test_t_rel = b.report.drift.t_rel;
                r.test_r_rel = b.report.drift.r_rel;
                for (double v : {r.final_loss, r.train_t_rel, r.train_r_rel, r.test_t_rel, r.test_r_rel}) require_finite(v, "ablation metric");
                if (progress) {
                    *progress << "seed " << seed << "  patch " << patch << "  coverage " << cov << "  train t_rel " << r.train_t_rel
                              << "  test t_rel " << r.test_t_rel << std::endl;
                }
                rows.push_back(r);
            }
        }
    }
    return rows;
}

/// Sweep over the config's ablate grid; writes sweep.csv and sweep.svg.
inline std::vector<AblationRow> cmd_ablate(const Config& cfg, const std::optional<fs::path>& data_dir, const fs::path& out, Manifest& m,
                                           std::ostream* progress = nullptr) {
    ensure_writable(out);
    cfg.ablate.validate();
    const auto splits = ablation_splits(cfg, data_dir);
    const auto patches = cfg.ablate.patch_sizes(cfg.train.depth_net.width);
    const auto rows = ablation_rows(cfg, fit_to_model(splits.train, cfg.train.depth_net), fit_to_model(splits.test, cfg.train.depth_net),
                                    patches, progress);
    const auto csv = out / "sweep.csv", plot = out / "sweep.svg";
    eval::write_text(csv, ablation_csv(rows));
    eval::write_text(plot, ablation_svg(rows, patches, cfg.ablate.coverages));
    m.artifact(csv);
    m.artifact(plot);
    if (data_dir) m.input("data", *data_dir);
    m.set("cells", rows.size());
    m.write(out);
    return rows;
}

}  // namespace egolab::cli
