#pragma once

// Joint self-supervised training of the depth and pose networks.

#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include "egolab/losses/total.hpp"
#include "egolab/trainer/optim.hpp"

namespace egolab::train {

struct Model {
    net::DepthNetConfig depth_cfg;
    net::PoseNetConfig pose_cfg;
    ParamSet depth, pose;

    static Model init(const TrainConfig& c) {
        Model m{c.depth_net, c.pose_net, net::init_depth_params(c.depth_net, c.seed), net::init_pose_params(c.pose_net, c.seed + 1)};
        round_params(m.depth, c.param_precision);
        round_params(m.pose, c.param_precision);
        return m;
    }

    /// Copy with its own parameter storage (plain copies share tensors).
    Model deep_copy() const { return {depth_cfg, pose_cfg, depth.clone(), pose.clone()}; }
};

/// Parameter copies that build no graph.
inline ParamSet frozen(const ParamSet& ps) {
    ParamSet out = ps.clone();
    for (auto& [_, p] : out.entries()) p.value = p.value.detach();
    return out;
}

/// Worker threads for per-snippet passes: EGOLAB_THREADS if set, otherwise
/// the hardware concurrency.
inline std::size_t worker_count() {
    if (const char* e = std::getenv("EGOLAB_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(e, &end, 10);
        if (end == e || *end != '\0' || v < 1) throw Error("EGOLAB_THREADS must be a positive integer, got '" + std::string(e) + "'");
        return std::size_t(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

struct EpochLog {
    std::size_t epoch = 0;
    double total = 0, photometric = 0, smoothness = 0, masked_fraction = 0;
    double lr_depth = 0, lr_pose = 0;

    bool operator==(const EpochLog&) const = default;
};

inline void to_json(nlohmann::json& j, const EpochLog& e) {
    j = {{"epoch", e.epoch}, {"total", e.total}, {"photometric", e.photometric}, {"smoothness", e.smoothness},
         {"masked_fraction", e.masked_fraction}, {"lr_depth", e.lr_depth}, {"lr_pose", e.lr_pose}};
}
inline void from_json(const nlohmann::json& j, EpochLog& e) {
    e.epoch = j.at("epoch");
    e.total = j.at("total");
    e.photometric = j.at("photometric");
    e.smoothness = j.at("smoothness");
    e.masked_fraction = j.at("masked_fraction");
    e.lr_depth = j.at("lr_depth");
    e.lr_pose = j.at("lr_pose");
}

/// What one snippet contributed to a step.
struct SnippetPass {
    double total = 0, photometric = 0, smoothness = 0, masked_fraction = 0;
    Gradients depth_grad, pose_grad;
};

/// Instrumentation: the exact tensors fed to the loss and to the pose net.
struct PassTrace {
    std::size_t snippet = 0;
    Tensor loss_target;
    std::vector<Tensor> loss_sources;
    Tensor pose_target_image, pose_target_depth;
    std::vector<Tensor> pose_source_images, pose_source_depths;
};
using TraceHook = std::function<void(const PassTrace&)>;

inline Gradients collect_grads(const ParamSet& ps) {
    Gradients g;
    for (const auto& [name, p] : ps.entries()) g[name] = p.value.grad();
    return g;
}

/// Forward and backward pass for one snippet on private parameter copies.
/// Augmentation, when active, touches only the pose-network inputs.
inline SnippetPass snippet_pass(const Model& model, const TrainConfig& cfg, const synth::Snippet& snip, std::size_t snippet_id,
                                std::mt19937_64& rng, const TraceHook& hook = {}) {
    try {
        ParamSet dps = model.depth.clone(), pps = model.pose.clone();
        const ParamSet dfrozen = frozen(model.depth);
        const auto depths = net::depth_forward(dps, model.depth_cfg, snip.target.image);
        const std::size_t h = snip.target.image.dim(2), w = snip.target.image.dim(3);
        const bool augment = cfg.augment.active();
        auto pose_input = [&](const Tensor& img, const Tensor& dn) {
            if (!augment) return aug::Obfuscated{img, dn};
            const auto m = aug::sample_mask(cfg.augment, rng, h, w);
            return aug::apply_obfuscation(img, dn, m, rng, cfg.augment.apply_to_depth);
        };
        const auto tgt = pose_input(snip.target.image, net::normalize_depth_for_pose(depths[0]));
        PassTrace trace{snippet_id, snip.target.image, snip.source_images(), tgt.image, *tgt.depth, {}, {}};
        std::vector<Tensor> poses;
        for (std::size_t i = 0; i < snip.sources.size(); ++i) {
            const auto& src = snip.sources[i];
            const Tensor sd = net::depth_forward(dfrozen, model.depth_cfg, src.image)[0];
            const auto s = pose_input(src.image, net::normalize_depth_for_pose(sd));
            const bool past = i < snip.source_indices.size() && snip.source_indices[i] < snip.target_index;
            if (cfg.pose_order == PoseOrder::chronological && past) {
                const Tensor x = net::pose_forward(pps, model.pose_cfg, s.image, *s.depth, tgt.image, *tgt.depth);
                poses.push_back(geom::invert_pose_matrix(geom::pose_matrix(x)));
            } else {
                poses.push_back(net::pose_forward(pps, model.pose_cfg, tgt.image, *tgt.depth, s.image, *s.depth));
            }
            trace.pose_source_images.push_back(s.image);
            trace.pose_source_depths.push_back(*s.depth);
        }
        if (hook) hook(trace);
        const auto b = loss::total_loss({snip.target.image, snip.source_images(), poses, snip.intrinsics}, depths, cfg.loss, cfg.ssim);
        if (!std::isfinite(b.value())) throw NumericError("non-finite loss");
        b.total.backward();
        return {b.value(), b.photometric, b.smoothness, b.masked_fraction, collect_grads(dps), collect_grads(pps)};
    } catch (const NumericError& e) {
        throw NumericError("training diverged at snippet " + std::to_string(snippet_id) + " (target frame " +
                           std::to_string(snip.target_index) + "): " + e.what());
    }
}

struct StepStats {
    double total = 0, photometric = 0, smoothness = 0, masked_fraction = 0;
    double depth_grad_norm = 0, pose_grad_norm = 0;
};

inline std::string rng_state(const std::mt19937_64& r) {
    std::ostringstream s;
    s << r;
    return s.str();
}
inline std::mt19937_64 rng_from_state(const std::string& state) {
    std::mt19937_64 r;
    std::istringstream s(state);
    s >> r;
    if (!s) throw Error("corrupt RNG state");
    return r;
}

class Trainer {
public:
    Trainer(TrainConfig cfg, const synth::SequenceDataset& ds)
        : cfg_(std::move(cfg)), model_(), shuffle_rng_(cfg_.seed) {
        cfg_.validate();
        model_ = Model::init(cfg_);
        depth_opt_ = OptimizerState::for_params(model_.depth);
        pose_opt_ = OptimizerState::for_params(model_.pose);
        set_data(ds);
    }

    /// Replaces the training data (e.g. after restoring a checkpoint).
    void set_data(const synth::SequenceDataset& ds) {
        ds.validate();
        snippets_ = synth::snippets(ds, cfg_.context);
        if (snippets_.empty()) throw Error("train: dataset yields no snippets (" + std::to_string(ds.size()) + " frames)");
        const auto& img = snippets_.front().target.image;
        if (img.dim(2) != cfg_.depth_net.height || img.dim(3) != cfg_.depth_net.width) {
            throw ShapeError("train: frames are " + std::to_string(img.dim(2)) + "x" + std::to_string(img.dim(3)) +
                             " but the depth net expects " + std::to_string(cfg_.depth_net.height) + "x" +
                             std::to_string(cfg_.depth_net.width));
        }
    }

    /// One optimizer step over the given snippets (gradients of the mean loss).
    StepStats step(const std::vector<std::size_t>& ids) {
        if (ids.empty()) throw Error("train: empty batch");
        std::vector<SnippetPass> passes(ids.size());
        std::vector<std::exception_ptr> errors(ids.size());
        const std::size_t workers = std::min(worker_count(), ids.size());
        std::mutex hook_mutex;
        TraceHook hook;
        if (hook_) {
            hook = [&](const PassTrace& t) {
                std::lock_guard lock(hook_mutex);
                hook_(t);
            };
        }
        auto run = [&](std::size_t worker) {
            for (std::size_t i = worker; i < ids.size(); i += workers) {
                try {
                    const std::size_t id = ids[i];
                    if (id >= snippets_.size()) throw Error("train: snippet id out of range");
                    std::seed_seq seq{std::uint64_t(cfg_.seed), std::uint64_t(depth_opt_.step), std::uint64_t(id), std::uint64_t(i)};
                    std::mt19937_64 rng(seq);
                    passes[i] = snippet_pass(model_, cfg_, snippets_[id], id, rng, hook);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        if (workers == 1) {
            run(0);
        } else {
            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
            for (auto& t : pool) t.join();
        }
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
        // deterministic reduction in batch order
        StepStats st;
        Gradients dg = std::move(passes[0].depth_grad), pg = std::move(passes[0].pose_grad);
        for (std::size_t i = 1; i < passes.size(); ++i) {
            for (auto& [k, v] : dg)
                for (std::size_t j = 0; j < v.size(); ++j) v[j] += passes[i].depth_grad.at(k)[j];
            for (auto& [k, v] : pg)
                for (std::size_t j = 0; j < v.size(); ++j) v[j] += passes[i].pose_grad.at(k)[j];
        }
        const double inv = 1.0 / double(ids.size());
        for (auto* g : {&dg, &pg})
            for (auto& [_, v] : *g)
                for (Real& x : v) x *= inv;
        for (const auto& p : passes) {
            st.total += p.total * inv;
            st.photometric += p.photometric * inv;
            st.smoothness += p.smoothness * inv;
            st.masked_fraction += p.masked_fraction * inv;
        }
        st.depth_grad_norm = clip_grad_norm(dg, cfg_.grad_clip);
        st.pose_grad_norm = clip_grad_norm(pg, cfg_.grad_clip);
        const auto [lr_d, lr_p] = lr_at(epoch_, cfg_);
        adam_step(model_.depth, dg, depth_opt_, {lr_d, cfg_.beta1, cfg_.beta2, cfg_.eps_adam, cfg_.param_precision});
        adam_step(model_.pose, pg, pose_opt_, {lr_p, cfg_.beta1, cfg_.beta2, cfg_.eps_adam, cfg_.param_precision});
        return st;
    }

    /// One pass over all snippets in a seeded shuffled order.
    EpochLog run_epoch() {
        std::vector<std::size_t> order(snippets_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng_);
        EpochLog log;
        log.epoch = epoch_;
        std::tie(log.lr_depth, log.lr_pose) = lr_at(epoch_, cfg_);
        const double n = double(order.size());
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::vector<std::size_t> batch(order.begin() + std::ptrdiff_t(start),
                                                 order.begin() + std::ptrdiff_t(std::min(start + cfg_.batch_size, order.size())));
            const auto st = step(batch);
            const double f = double(batch.size()) / n;
            log.total += st.total * f;
            log.photometric += st.photometric * f;
            log.smoothness += st.smoothness * f;
            log.masked_fraction += st.masked_fraction * f;
        }
        ++epoch_;
        history_.push_back(log);
        return log;
    }

    /// Runs until `epochs` epochs are complete in total; `on_epoch` sees each log.
    void run(const std::function<void(const EpochLog&)>& on_epoch = {}) {
        while (epoch_ < cfg_.epochs) {
            const auto log = run_epoch();
            if (on_epoch) on_epoch(log);
        }
    }

    void set_trace_hook(TraceHook h) { hook_ = std::move(h); }

    const TrainConfig& config() const { return cfg_; }
    TrainConfig& mutable_config() { return cfg_; }
    const Model& model() const { return model_; }
    Model& mutable_model() { return model_; }
    const OptimizerState& depth_optimizer() const { return depth_opt_; }
    const OptimizerState& pose_optimizer() const { return pose_opt_; }
    std::size_t epoch() const { return epoch_; }
    const std::vector<EpochLog>& history() const { return history_; }
    const std::vector<synth::Snippet>& snippet_list() const { return snippets_; }
    std::string shuffle_state() const { return rng_state(shuffle_rng_); }

    /// Restores the mutable state; used by checkpoint loading.
    void restore(Model m, OptimizerState d, OptimizerState p, std::size_t epoch, const std::string& rng, std::vector<EpochLog> history) {
        model_ = m.deep_copy();
        depth_opt_ = std::move(d);
        pose_opt_ = std::move(p);
        epoch_ = epoch;
        shuffle_rng_ = rng_from_state(rng);
        history_ = std::move(history);
    }

private:
    TrainConfig cfg_;
    Model model_;
    OptimizerState depth_opt_, pose_opt_;
    std::mt19937_64 shuffle_rng_;
    std::size_t epoch_ = 0;
    std::vector<EpochLog> history_;
    std::vector<synth::Snippet> snippets_;
    TraceHook hook_;
};

}  // namespace egolab::train
