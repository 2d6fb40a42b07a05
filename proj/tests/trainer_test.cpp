#include <gtest/gtest.h>

#include <cstdlib>

#include "egolab/trainer/checkpoint.hpp"
#include "egolab/trainer/inference.hpp"

using namespace egolab;
using namespace egolab::train;
using geom::Vec3;

namespace {

synth::SequenceDataset small_sequence(std::size_t frames, std::size_t side = 32) {
    synth::SceneConfig cfg;
    cfg.geometry = synth::RandomHeightfield{8, 1, 6};
    auto ds = synth::generate_sequence(cfg, synth::make_trajectory({.frames = frames, .velocity = Vec3(0.15, 0, 0.1)}));
    return side == 64 ? ds : synth::resized(ds, side, side);
}

TrainConfig tiny_config(std::size_t side = 32) {
    TrainConfig c;
    c.epochs = 3;
    c.batch_size = 2;
    c.seed = 5;
    c.depth_net = {.base_channels = 4, .encoder_depth = 4, .height = side, .width = side};
    c.pose_net.tower_channels = {4, 8, 8, 8, 8, 8, 8, 8};
    return c;
}

struct ScopedEnv {
    std::string name;
    ScopedEnv(const char* n, const char* v) : name(n) { setenv(n, v, 1); }
    ~ScopedEnv() { unsetenv(name.c_str()); }
};

ParamSet scalar_param(double v) {
    ParamSet ps;
    std::mt19937_64 rng(0);
    ps.add("x", {1}, net::Init::zeros, 1, rng);
    ps.at("x").mutable_data()[0] = v;
    return ps;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
    auto ps = scalar_param(0.7);
    auto st = OptimizerState::for_params(ps);
    adam_step(ps, {{"x", {0.0}}}, st, {});
    EXPECT_EQ(ps["x"][0], 0.7);
    EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
    for (double g : {3.0, -0.02, 1e-3}) {
        auto ps = scalar_param(1.0);
        auto st = OptimizerState::for_params(ps);
        adam_step(ps, {{"x", {g}}}, st, {.lr = 1e-3});
        // m_hat = g, v_hat = g^2 at t = 1
        EXPECT_NEAR(ps["x"][0], 1.0 - 1e-3 * g / (std::abs(g) + 1e-8), 1e-15);
        EXPECT_NEAR(ps["x"][0], 1.0 - 1e-3 * (g > 0 ? 1 : -1), 1e-8);
    }
    const AdamHyper h;
    EXPECT_EQ(h.beta1, 0.9);
    EXPECT_EQ(h.beta2, 0.999);
    EXPECT_EQ(TrainConfig{}.beta1, 0.9);
    EXPECT_EQ(TrainConfig{}.beta2, 0.999);
}

TEST(Adam, MatchesScalarReferenceOverSeveralSteps) {
    auto ps = scalar_param(0.5);
    auto st = OptimizerState::for_params(ps);
    const std::vector<double> gs{0.3, -1.2, 0.05, 2.0, -0.4};
    double x = 0.5, m = 0, v = 0;
    for (std::size_t t = 1; t <= gs.size(); ++t) {
        const double g = gs[t - 1];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        x -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
        adam_step(ps, {{"x", {g}}}, st, {.lr = 0.01});
        EXPECT_NEAR(ps["x"][0], x, 1e-15);
    }
}

TEST(Adam, RejectsBadGradients) {
    auto ps = scalar_param(0.5);
    auto st = OptimizerState::for_params(ps);
    EXPECT_THROW(adam_step(ps, {{"x", {std::nan("")}}}, st, {}), NumericError);
    EXPECT_THROW(adam_step(ps, {{"x", {1.0, 2.0}}}, st, {}), ShapeError);
    EXPECT_THROW(adam_step(ps, {}, st, {}), Error);
    EXPECT_EQ(st.step, 0u);
    EXPECT_EQ(ps["x"][0], 0.5);
}

TEST(Schedule, HalvesEveryEightyEpochs) {
    const TrainConfig c;
    EXPECT_EQ(lr_at(0, c), std::make_pair(1e-3, 5e-4));
    EXPECT_EQ(lr_at(79, c), std::make_pair(1e-3, 5e-4));
    EXPECT_EQ(lr_at(80, c), std::make_pair(5e-4, 2.5e-4));
    EXPECT_EQ(lr_at(160, c), std::make_pair(2.5e-4, 1.25e-4));
}

TEST(Config, JsonRoundTripAndValidation) {
    TrainConfig c = tiny_config();
    c.augment = {.coverage = 0.2, .patch_side = 5, .enabled = true};
    const auto j = nlohmann::json(c);
    const auto back = j.get<TrainConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_THROW(nlohmann::json::parse(R"({"epochz": 3})").get<TrainConfig>(), Error);
    EXPECT_THROW(nlohmann::json::parse(R"({"lr_depth": 0})").get<TrainConfig>(), Error);
    EXPECT_THROW(nlohmann::json::parse(R"({"beta1": 1.0})").get<TrainConfig>(), Error);
    EXPECT_THROW(nlohmann::json::parse(R"({"param_precision": 16})").get<TrainConfig>(), Error);
    const TrainConfig d;
    EXPECT_EQ(d.batch_size, 8u);
    EXPECT_EQ(d.epochs, 200u);
    EXPECT_EQ(d.grad_clip, 10.0);
}

TEST(Clip, ScalesToMaxNorm) {
    Gradients g{{"a", {3.0}}, {"b", {4.0}}};
    EXPECT_NEAR(clip_grad_norm(g, 1.0), 5.0, 1e-15);
    EXPECT_NEAR(g["a"][0], 0.6, 1e-15);
    EXPECT_NEAR(g["b"][0], 0.8, 1e-15);
    Gradients h{{"a", {3.0}}};
    clip_grad_norm(h, 0);
    EXPECT_EQ(h["a"][0], 3.0);
}

TEST(Trainer, OverfitsOneSnippet) {
    const auto ds = small_sequence(3, 64);
    TrainConfig c = tiny_config(64);
    c.batch_size = 1;
    Trainer t(c, ds);
    ASSERT_EQ(t.snippet_list().size(), 1u);
    const double first = t.step({0}).total;
    double last = first;
    for (int i = 1; i < 50; ++i) last = t.step({0}).total;
    EXPECT_LT(last, 0.5 * first) << "initial " << first << " final " << last;
}

TEST(Trainer, IdenticalTracesForIdenticalSeeds) {
    const auto ds = small_sequence(6);
    Trainer a(tiny_config(), ds), b(tiny_config(), ds);
    a.run();
    b.run();
    EXPECT_EQ(a.history(), b.history());
    EXPECT_TRUE(a.model().depth == b.model().depth);
    EXPECT_TRUE(a.model().pose == b.model().pose);
    TrainConfig other = tiny_config();
    other.seed = 6;
    Trainer c(other, ds);
    c.run();
    EXPECT_NE(a.history(), c.history());
}

TEST(Trainer, WorkerCountDoesNotChangeResults) {
    const auto ds = small_sequence(6);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.augment = {.coverage = 0.2, .patch_side = 5, .enabled = true};
    std::vector<EpochLog> h1, h3;
    {
        ScopedEnv env("EGOLAB_THREADS", "1");
        Trainer t(cfg, ds);
        t.run();
        h1 = t.history();
    }
    {
        ScopedEnv env("EGOLAB_THREADS", "3");
        Trainer t(cfg, ds);
        t.run();
        h3 = t.history();
    }
    EXPECT_EQ(h1, h3);
    ScopedEnv bad("EGOLAB_THREADS", "zero");
    EXPECT_THROW(worker_count(), Error);
}

TEST(Checkpoint, ResumeGivesIdenticalTraceAndBytes) {
    const auto ds = small_sequence(6);
    TrainConfig cfg = tiny_config();
    cfg.augment = {.coverage = 0.3, .patch_side = 7, .enabled = true};
    Trainer full(cfg, ds);
    full.run();

    Trainer first(cfg, ds);
    first.run_epoch();
    const std::string bytes = serialize(Checkpoint::capture(first));
    const Checkpoint loaded = deserialize(bytes);
    EXPECT_EQ(serialize(loaded), bytes);
    Trainer resumed = resume(loaded, ds);
    resumed.run();
    EXPECT_EQ(resumed.history(), full.history());
    EXPECT_TRUE(resumed.model().depth == full.model().depth);
    EXPECT_TRUE(resumed.model().pose == full.model().pose);
    EXPECT_TRUE(resumed.depth_optimizer() == full.depth_optimizer());
    EXPECT_EQ(serialize(Checkpoint::capture(resumed)), serialize(Checkpoint::capture(full)));
}

TEST(Checkpoint, DoublePrecisionAndCorruptInputs) {
    const auto ds = small_sequence(4);
    TrainConfig cfg = tiny_config();
    cfg.param_precision = 64;
    cfg.epochs = 1;
    Trainer t(cfg, ds);
    t.run();
    const auto bytes = serialize(Checkpoint::capture(t));
    const auto c = deserialize(bytes);
    EXPECT_TRUE(c.model.depth == t.model().depth);
    EXPECT_EQ(serialize(c), bytes);

    EXPECT_THROW(deserialize("NOTACHECKPOINT__"), Error);
    EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 4)), Error);
    auto j = bytes;
    const auto at = j.find("\"version\":1");
    ASSERT_NE(at, std::string::npos);
    j[at + 10] = '7';
    EXPECT_THROW(deserialize(j), Error);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto ds = small_sequence(4);
    TrainConfig cfg = tiny_config();
    cfg.epochs = 1;
    Trainer t(cfg, ds);
    t.run();
    const auto path = std::filesystem::temp_directory_path() / "egolab_trainer_test" / "ck.bin";
    save_checkpoint(Checkpoint::capture(t), path);
    EXPECT_EQ(serialize(load_checkpoint(path)), serialize(Checkpoint::capture(t)));
    std::filesystem::remove_all(path.parent_path());
}

TEST(Augmentation, TouchesOnlyPoseInputs) {
    const auto ds = small_sequence(4);
    TrainConfig cfg = tiny_config();
    cfg.augment = {.coverage = 0.4, .patch_side = 6, .enabled = true};
    std::vector<PassTrace> on, off;
    {
        Trainer t(cfg, ds);
        t.set_trace_hook([&](const PassTrace& p) { on.push_back(p); });
        t.step({0, 1});
    }
    cfg.augment.enabled = false;
    {
        Trainer t(cfg, ds);
        t.set_trace_hook([&](const PassTrace& p) { off.push_back(p); });
        t.step({0, 1});
    }
    ASSERT_EQ(on.size(), 2u);
    ASSERT_EQ(off.size(), 2u);
    const auto all = synth::snippets(ds);
    for (std::size_t i = 0; i < 2; ++i) {
        const auto& snip = all[on[i].snippet];
        // loss inputs are the clean frames, bit for bit, with or without augmentation
        EXPECT_EQ(on[i].loss_target.data(), snip.target.image.data());
        EXPECT_EQ(off[i].loss_target.data(), snip.target.image.data());
        for (std::size_t s = 0; s < snip.sources.size(); ++s) {
            EXPECT_EQ(on[i].loss_sources[s].data(), snip.sources[s].image.data());
            EXPECT_EQ(off[i].pose_source_images[s].data(), snip.sources[s].image.data());
            EXPECT_NE(on[i].pose_source_images[s].data(), snip.sources[s].image.data());
        }
        EXPECT_NE(on[i].pose_target_image.data(), snip.target.image.data());
        EXPECT_EQ(off[i].pose_target_image.data(), snip.target.image.data());
        EXPECT_NE(on[i].pose_target_depth.data(), off[i].pose_target_depth.data());
    }
}

TEST(Trainer, NonFiniteLossNamesTheSnippet) {
    const auto ds = small_sequence(4);
    Trainer t(tiny_config(), ds);
    t.mutable_model().depth.at("depth.disp0.b").mutable_data()[0] = std::nan("");
    try {
        t.step({1});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("snippet 1"), std::string::npos) << e.what();
    }
}

TEST(Trainer, RejectsMismatchedData) {
    EXPECT_THROW(Trainer(tiny_config(64), small_sequence(4, 32)), ShapeError);
    EXPECT_THROW(Trainer(tiny_config(), small_sequence(2)), Error);
}

TEST(Inference, ZeroPoseHeadsGiveStationaryTrajectory) {
    const auto ds = small_sequence(5);
    const auto m = Model::init(tiny_config());
    const auto traj = predict_trajectory(m, ds);
    ASSERT_EQ(traj.size(), 5u);
    for (const auto& p : traj.poses) EXPECT_TRUE(geom::approx_equal(p, geom::SE3Transform(), 1e-12));
    const auto gt = gt_trajectory(ds);
    EXPECT_TRUE(geom::approx_equal(gt.poses[0], geom::SE3Transform(), 1e-12));
    EXPECT_NEAR(gt.poses[4].translation().x(), 0.6, 1e-9);
    EXPECT_EQ(predict_depths(m, ds).size(), 5u);
}

TEST(PoseOrder, OnlyPastSourcesAreInverted) {
    const auto ds = small_sequence(6);
    TrainConfig a = tiny_config(), b = tiny_config();
    b.pose_order = PoseOrder::target_first;
    a.context = b.context = synth::Context::one_source;
    Trainer ta(a, ds), tb(b, ds);
    EXPECT_EQ(ta.step({0, 1}).total, tb.step({0, 1}).total);

    a.context = b.context = synth::Context::two_source;
    Trainer tc(a, ds), td(b, ds);
    for (int i = 0; i < 3; ++i) {
        tc.step({0, 1});
        td.step({0, 1});
    }
    EXPECT_NE(tc.step({2, 3}).total, td.step({2, 3}).total);
    EXPECT_EQ(nlohmann::json(b).at("pose_order"), "target_first");
    EXPECT_EQ(nlohmann::json(b).get<TrainConfig>().pose_order, PoseOrder::target_first);
    EXPECT_THROW(nlohmann::json::parse(R"({"pose_order": "backwards"})").get<TrainConfig>(), Error);
}
