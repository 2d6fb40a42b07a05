#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>

#include "egolab/diffcore/gradcheck.hpp"
#include "egolab/geometry/warp.hpp"
#include "egolab/synthdata/dataset.hpp"
#include "test_util.hpp"

using namespace egolab;
using namespace egolab::geom;
using diff::Tensor;

namespace {

std::uint64_t mask_key(const diff::Mask& m) {
    std::uint64_t h = 1469598103934665603ull;
    for (auto b : m.bits) h = (h ^ b) * 1099511628211ull;
    return h;
}

// Bilinear sampling is smooth only inside one pixel cell: fingerprint the
// validity mask together with the cell of every sample point.
std::uint64_t warp_key(const Tensor& depth, const Tensor& pose, const CameraIntrinsics& K) {
    auto proj = project_grid(depth, pose_matrix(pose), K);
    auto s = diff::bilinear_sample(Tensor::zeros({1, 1, K.height, K.width}), proj.grid);
    std::uint64_t h = mask_key(s.valid & proj.in_front);
    for (Real c : proj.grid.data()) h = (h ^ std::uint64_t(std::int64_t(std::floor(c)))) * 1099511628211ull;
    return h;
}

Tensor smooth_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ph(0, 6.28), fr(0.15, 0.4);
    std::vector<Real> v(c * h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double a = fr(rng), b = fr(rng), p = ph(rng), q = ph(rng);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                v[(ch * h + y) * w + x] = 0.5 + 0.25 * std::sin(a * double(x) + p) * std::cos(b * double(y) + q);
    }
    return Tensor({1, c, h, w}, v);
}

}  // namespace

TEST(PoseFromParams, ZeroIsIdentity) {
    auto T = pose_from_params(PoseVec6());
    EXPECT_TRUE(T.matrix().isIdentity(0));
}

TEST(PoseFromParams, TranslationOnly) {
    auto T = pose_from_params(PoseVec6(Vec3(1, 2, 3), Vec3::Zero()));
    EXPECT_TRUE(T.rotation().isIdentity(0));
    EXPECT_EQ(T.translation(), Vec3(1, 2, 3));
}

TEST(PoseFromParams, QuarterTurnAboutX) {
    auto T = pose_from_params(PoseVec6(Vec3::Zero(), Vec3(std::numbers::pi / 2, 0, 0)));
    const Vec3 y = T.rotation() * Vec3(0, 1, 0);
    EXPECT_NEAR((y - Vec3(0, 0, 1)).norm(), 0, 1e-15);
}

TEST(PoseFromParams, EulerOrderIsZYX) {
    const Vec3 r(0.1, -0.2, 0.3);
    const Mat3 expected = Eigen::AngleAxisd(r.z(), Vec3::UnitZ()).toRotationMatrix() *
                          Eigen::AngleAxisd(r.y(), Vec3::UnitY()).toRotationMatrix() *
                          Eigen::AngleAxisd(r.x(), Vec3::UnitX()).toRotationMatrix();
    EXPECT_LT((euler_to_rotation(r) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PoseVec6, RejectsOutOfRangeAngles) {
    EXPECT_THROW(PoseVec6(Vec3::Zero(), Vec3(4, 0, 0)), Error);
    EXPECT_THROW(PoseVec6(Vec3(std::nan(""), 0, 0), Vec3::Zero()), Error);
}

TEST(SE3, RejectsNonRotation) {
    Mat3 R = Mat3::Identity();
    R(0, 0) = 2;
    EXPECT_THROW(SE3Transform(R, Vec3::Zero()), Error);
    EXPECT_THROW(SE3Transform(-Mat3::Identity(), Vec3::Zero()), Error);
}

TEST(SE3, ComposeAndInvert) {
    auto T = pose_from_params(PoseVec6(Vec3(0.3, -1, 2), Vec3(0.2, 0.1, -0.4)));
    EXPECT_TRUE(approx_equal(compose(SE3Transform(), T), T, 1e-12));
    EXPECT_TRUE(approx_equal(compose(T, invert(T)), SE3Transform(), 1e-9));
    auto a = pose_from_params(PoseVec6(Vec3(1, 0, 0), Vec3::Zero()));
    auto b = pose_from_params(PoseVec6(Vec3(0, 1, 0), Vec3::Zero()));
    EXPECT_TRUE(compose(a, b).translation().isApprox(Vec3(1, 1, 0)));
    // b is applied first
    const Vec3 p(0.5, 0.2, 1.0);
    EXPECT_LT((compose(a, T) * p - a * (T * p)).norm(), 1e-12);
}

TEST(SE3, EulerRoundTripForSmallAngles) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> ang(-0.5, 0.5), tr(-3, 3);
    for (int i = 0; i < 1000; ++i) {
        PoseVec6 v(Vec3(tr(rng), tr(rng), tr(rng)), Vec3(ang(rng), ang(rng), ang(rng)));
        PoseVec6 back = params_from_pose(pose_from_params(v));
        EXPECT_LT((back.t - v.t).norm(), 1e-9);
        EXPECT_LT((back.r - v.r).norm(), 1e-9);
    }
}

TEST(SE3, RotationAngleByTrace) {
    EXPECT_NEAR(rotation_angle(rot_z(0.3)), 0.3, 1e-12);
    EXPECT_NEAR(rotation_angle(Mat3::Identity()), 0, 0);
}

TEST(PoseMatrix, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = testutil::random_tensor(rng, {2, 6}, -0.8, 0.8);
        auto rep = diff::check_gradient([&](const Tensor& x) { return testutil::weighted_sum(pose_matrix(x), trial); }, p);
        EXPECT_LT(rep.max_rel_error, 1e-6);
    }
}

TEST(Intrinsics, ValidatesAndRoundTripsThroughJson) {
    EXPECT_THROW(CameraIntrinsics::make(-1, 1, 1, 1, 4, 4), Error);
    EXPECT_THROW(CameraIntrinsics::make(1, 1, 4, 1, 4, 4), Error);
    auto k = CameraIntrinsics::make(50, 51, 31.5, 30, 64, 62);
    auto path = std::filesystem::temp_directory_path() / "egolab_intrinsics_test.json";
    save_intrinsics(k, path.string());
    EXPECT_EQ(load_intrinsics(path.string()), k);
    auto half = k.resized(32, 31);
    EXPECT_DOUBLE_EQ(half.fx, 25);
    EXPECT_DOUBLE_EQ(half.cx, 15.5);
}

TEST(SynthesizeView, IdentityPoseReproducesSource) {
    auto K = CameraIntrinsics::make(40, 40, 15.5, 11.5, 32, 24);
    std::mt19937_64 rng(2);
    auto src = testutil::random_tensor(rng, {1, 3, 24, 32}, 0, 1);
    auto depth = testutil::random_tensor(rng, {1, 1, 24, 32}, 0.5, 20);
    auto out = synthesize_view(src, depth, PoseVec6(), K);
    EXPECT_EQ(out.valid.count(), 24u * 32u);
    for (std::size_t i = 0; i < src.size(); ++i) EXPECT_NEAR(out.image[i], src[i], 1e-12);
}

TEST(SynthesizeView, FrontoParallelTranslationShiftsUniformly) {
    // Source varies linearly in u, so bilinear sampling is exact and every
    // pixel can be checked against a direct projection.
    const std::size_t h = 16, w = 20;
    const double Z = 5, tx = 0.37;
    auto K = CameraIntrinsics::make(30, 28, 9.5, 7.5, w, h);
    std::vector<Real> img(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) img[y * w + x] = 0.05 * double(x) + 0.01 * double(y);
    Tensor src({1, 1, h, w}, img);
    auto out = synthesize_view(src, Tensor::full({1, 1, h, w}, Z), PoseVec6(Vec3(tx, 0, 0), Vec3::Zero()), K);
    const double shift = K.fx * tx / Z;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            // brute force: back-project, move, project
            const Vec3 P = Z * Vec3((double(x) - K.cx) / K.fx, (double(y) - K.cy) / K.fy, 1) + Vec3(tx, 0, 0);
            const double u = K.fx * P.x() / P.z() + K.cx, v = K.fy * P.y() / P.z() + K.cy;
            EXPECT_NEAR(u - double(x), shift, 1e-12);
            EXPECT_NEAR(v, double(y), 1e-12);
            const bool inside = u <= double(w - 1);
            EXPECT_EQ(out.valid[y * w + x], inside);
            if (inside) { EXPECT_NEAR(out.image[y * w + x], 0.05 * u + 0.01 * v, 1e-12); }
        }
}

TEST(SynthesizeView, PointsBehindCameraAreInvalid) {
    auto K = CameraIntrinsics::make(20, 20, 7.5, 7.5, 16, 16);
    auto out = synthesize_view(Tensor::full({1, 1, 16, 16}, 0.5), Tensor::full({1, 1, 16, 16}, 3),
                               PoseVec6(Vec3(0, 0, -10), Vec3::Zero()), K);
    EXPECT_EQ(out.valid.count(), 0u);
}

TEST(SynthesizeView, NonPositiveDepthIsAnError) {
    auto K = CameraIntrinsics::make(20, 20, 3.5, 3.5, 8, 8);
    auto d = Tensor::full({1, 1, 8, 8}, 2);
    d.mutable_data()[5] = 0;
    EXPECT_THROW(synthesize_view(Tensor::full({1, 1, 8, 8}, 0.5), d, PoseVec6(), K), Error);
}

TEST(SynthesizeView, PoseAndDepthGradientsMatchFiniteDifferences) {
    const std::size_t h = 16, w = 16;
    auto K = CameraIntrinsics::make(18, 18, 7.5, 7.5, w, h);
    std::mt19937_64 rng(31);
    int checked = 0;
    for (int trial = 0; trial < 30; ++trial) {
        auto src = smooth_image(3, h, w, 100 + std::uint64_t(trial));
        auto depth = testutil::random_tensor(rng, {1, 1, h, w}, 2, 4);
        auto pose = testutil::random_tensor(rng, {1, 6}, -0.05, 0.05);
        auto key = [&](const Tensor& p) { return warp_key(depth, p, K); };
        auto f = [&](const Tensor& p) { return testutil::weighted_sum(synthesize_view(src, depth, p, K).image, 7); };
        auto rep = diff::check_gradient(f, pose, {.eps = 1e-5, .branch_key = key});
        checked += int(rep.checked);
        EXPECT_LT(rep.max_rel_error, 1e-3) << "trial " << trial << " idx " << rep.worst_index;
        auto fd = [&](const Tensor& d) { return testutil::weighted_sum(synthesize_view(src, d, pose, K).image, 9); };
        auto keyd = [&](const Tensor& d) { return warp_key(d, pose, K); };
        auto repd = diff::check_gradient(fd, depth, {.eps = 1e-5, .branch_key = keyd});
        EXPECT_LT(repd.max_rel_error, 1e-3);
    }
    EXPECT_GT(checked, 60);
}

TEST(PoseMatrix, InverseMatchesSe3InverseAndGradChecks) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        const auto p = testutil::random_tensor(rng, {2, 6}, -0.5, 0.5);
        const auto inv = geom::invert_pose_matrix(geom::pose_matrix(p));
        for (std::size_t b = 0; b < 2; ++b) {
            const auto& v = p.data();
            const PoseVec6 pv(Vec3(v[6 * b], v[6 * b + 1], v[6 * b + 2]), Vec3(v[6 * b + 3], v[6 * b + 4], v[6 * b + 5]));
            const auto ref = geom::invert(geom::pose_from_params(pv));
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) EXPECT_NEAR(inv.data()[12 * b + 3 * i + j], ref.rotation()(i, j), 1e-12);
                EXPECT_NEAR(inv.data()[12 * b + 9 + i], ref.translation()(i), 1e-12);
            }
        }
        const auto w = testutil::random_tensor(rng, {2, 12});
        const auto rep = diff::check_gradient(
            [&](const diff::Tensor& x) { return diff::sum(geom::invert_pose_matrix(geom::pose_matrix(x)) * w); }, p, {.eps = 1e-6});
        EXPECT_LT(rep.max_rel_error, 1e-6);
        const auto twice = geom::invert_pose_matrix(geom::invert_pose_matrix(geom::pose_matrix(p)));
        const auto once = geom::pose_matrix(p);
        for (std::size_t k = 0; k < 24; ++k) EXPECT_NEAR(twice.data()[k], once.data()[k], 1e-12);
    }
    EXPECT_THROW(geom::invert_pose_matrix(diff::Tensor({1, 6}, std::vector<Real>(6, 0.0))), ShapeError);
}

TEST(SynthesizeView, AcceptsMatrixEntries) {
    synth::SceneConfig cfg;
    cfg.geometry = synth::RandomHeightfield{8, 1, 6};
    auto ds = synth::generate_sequence(cfg, synth::make_trajectory({.frames = 2, .velocity = Vec3(0.2, 0, 0.05)}));
    const auto snip = synth::snippets(ds, synth::Context::one_source)[0];
    const auto pose = geom::pose_tensor(snip.gt_warp_pose(0));
    const auto a = geom::synthesize_view(snip.sources[0].image, *snip.target.depth, pose, ds.intrinsics);
    const auto b = geom::synthesize_view(snip.sources[0].image, *snip.target.depth, geom::pose_matrix(pose), ds.intrinsics);
    EXPECT_EQ(a.image.data(), b.image.data());
}
