#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "egolab/geometry/warp.hpp"
#include "egolab/synthdata/io.hpp"

using namespace egolab;
using namespace egolab::synth;
using diff::Tensor;
using geom::Vec3;

namespace {

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("egolab_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<PoseVec6> lateral(std::size_t n, double tx) {
    std::vector<PoseVec6> t;
    for (std::size_t k = 0; k < n; ++k) t.emplace_back(Vec3(tx * double(k), 0, 0), Vec3::Zero());
    return t;
}

double warp_mae(const Snippet& s, std::size_t i) {
    auto view = geom::synthesize_view(s.sources[i].image, *s.target.depth, s.gt_warp_pose(i), s.intrinsics);
    double acc = 0;
    std::size_t n = 0;
    const std::size_t plane = view.valid.size();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < plane; ++p)
            if (view.valid[p]) {
                acc += std::abs(view.image[c * plane + p] - s.target.image[c * plane + p]);
                ++n;
            }
    EXPECT_GT(n, plane * 3 / 2);
    return acc / double(n);
}

}  // namespace

TEST(GenerateSequence, IdentityTrajectoryGivesIdenticalFrames) {
    auto ds = generate_sequence(SceneConfig{}, std::vector<PoseVec6>(3), 0);
    ASSERT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.frames[0].image.data(), ds.frames[2].image.data());
}

TEST(GenerateSequence, FrontoPlaneDepthIsConstant) {
    auto ds = generate_sequence(SceneConfig{}, lateral(2, 0.1));
    for (Real d : ds.frames[1].depth->data()) EXPECT_NEAR(d, 10, 1e-12);
}

TEST(GenerateSequence, FrontoPlaneShiftMatchesFocalTimesBaselineOverDepth) {
    // fx = 50, Z = 10, tx = 0.1: 0.5 px. Locate the shift by the peak of a
    // sub-pixel cross-correlation scan along u.
    SceneConfig cfg;
    auto ds = generate_sequence(cfg, lateral(2, 0.1));
    const auto& a = ds.frames[0].image;
    const auto& b = ds.frames[1].image;
    const std::size_t h = 64, w = 64, n = h * w;
    auto score = [&](double shift) {
        // frame1(x) == frame0(x + shift) for camera moving +x
        double s = 0;
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 4; x + 5 < w; ++x) {
                    const double u = double(x) + shift;
                    const std::size_t x0 = std::size_t(std::floor(u));
                    const double f = u - double(x0);
                    const double va = (1 - f) * a[c * n + y * w + x0] + f * a[c * n + y * w + x0 + 1];
                    s -= std::pow(va - b[c * n + y * w + x], 2);
                }
        return s;
    };
    double best = 0, best_score = -1e300;
    for (int k = -100; k <= 200; ++k) {
        const double sh = 0.01 * k;
        if (const double sc = score(sh); sc > best_score) best_score = sc, best = sh;
    }
    EXPECT_NEAR(best, 0.5, 0.02);
}

TEST(GenerateSequence, DeterministicPerSeedAndSeedChangesTexture) {
    auto a = generate_sequence(SceneConfig{}, lateral(2, 0.1), 3);
    auto b = generate_sequence(SceneConfig{}, lateral(2, 0.1), 3);
    auto c = generate_sequence(SceneConfig{}, lateral(2, 0.1), 4);
    EXPECT_EQ(a.frames[1].image.data(), b.frames[1].image.data());
    EXPECT_NE(a.frames[1].image.data(), c.frames[1].image.data());
}

TEST(GenerateSequence, CameraBehindGeometryIsAnError) {
    EXPECT_THROW(generate_sequence(SceneConfig{}, {PoseVec6(Vec3(0, 0, 12), Vec3::Zero())}), Error);
}

TEST(GenerateSequence, HeightfieldDepthMatchesSurface) {
    SceneConfig cfg;
    cfg.geometry = RandomHeightfield{10, 1.5, 5};
    auto ds = generate_sequence(cfg, {PoseVec6()});
    const auto& d = ds.frames[0].depth->data();
    const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
    EXPECT_GE(*lo, 8.5 - 1e-9);
    EXPECT_LE(*hi, 11.5 + 1e-9);
    EXPECT_GT(*hi - *lo, 0.5);
}

class GtWarp : public ::testing::TestWithParam<int> {};

TEST_P(GtWarp, ReproducesTargetWithinInterpolationError) {
    SceneConfig cfg;
    const int kind = GetParam();
    if (kind == 1) cfg.geometry = SlantedPlane{Vec3(0.2, -0.1, 1).normalized(), 9};
    if (kind == 2) cfg.geometry = RandomHeightfield{10, 1.0, 6};
    TrajectoryConfig tc{.frames = 6, .velocity = Vec3(0.15, 0.02, 0.1), .wobble = 0.05, .rotation_wobble = 0.01,
                        .period = 10, .seed = std::uint64_t(kind)};
    auto ds = generate_sequence(cfg, make_trajectory(tc), std::uint64_t(kind));
    for (const auto& s : snippets(ds, Context::two_source, 1)) {
        for (std::size_t i = 0; i < s.sources.size(); ++i) EXPECT_LT(warp_mae(s, i), 1e-3) << "target " << s.target_index;
    }
}

INSTANTIATE_TEST_SUITE_P(Geometries, GtWarp, ::testing::Values(0, 1, 2));

TEST(Snippets, TwoSourceCentresAndOneSourcePairs) {
    auto ds = generate_sequence(SceneConfig{}, lateral(5, 0.1));
    auto two = snippets(ds, Context::two_source, 1);
    ASSERT_EQ(two.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(two[i].target_index, i + 1);
        EXPECT_EQ(two[i].source_indices, (std::vector<std::size_t>{i, i + 2}));
    }
    EXPECT_EQ(snippets(ds, Context::two_source, 2).size(), 2u);
    auto one = snippets(ds, Context::one_source, 1);
    ASSERT_EQ(one.size(), 4u);
    EXPECT_EQ(one[3].source_indices, std::vector<std::size_t>{4});
}

TEST(Snippets, GtRelativePoses) {
    auto same = generate_sequence(SceneConfig{}, std::vector<PoseVec6>(3));
    EXPECT_TRUE(geom::approx_equal(snippets(same)[0].gt_relative[0], SE3Transform(), 1e-15));

    auto ds = generate_sequence(SceneConfig{}, make_trajectory({.frames = 4, .velocity = Vec3(0.1, 0, 0.05), .wobble = 0.1,
                                                                 .rotation_wobble = 0.05, .period = 5, .seed = 2}));
    auto pairs = snippets(ds, Context::one_source, 1);
    const auto rel02 = make_snippet(ds, 0, {2}).gt_relative[0];
    EXPECT_TRUE(geom::approx_equal(geom::compose(pairs[0].gt_relative[0], pairs[1].gt_relative[0]), rel02, 1e-9));
}

TEST(PoseFile, ParsesRowMajorLines) {
    EXPECT_TRUE(to_transform(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0")).matrix().isIdentity(0));
    auto T = to_transform(parse_pose_line("1 0 0 5.5 0 1 0 0 0 0 1 2.0"));
    EXPECT_EQ(T.translation(), Vec3(5.5, 0, 2.0));
    EXPECT_THROW(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1"), Error);
    EXPECT_THROW(parse_pose_line("1 0 0 0 0 1 0 0 0 0 1 0 7"), Error);
    EXPECT_THROW(parse_pose_line("1 0 0 x 0 1 0 0 0 0 1 0"), Error);
}

TEST(PoseFile, RoundTripKeepsValues) {
    auto dir = temp_dir("posefile");
    {
        std::ofstream f(dir / "in.txt");
        f << "1.000000e+00 9.043680e-12 2.326809e-11 5.551115e-17 9.043683e-12 1.000000e+00 2.392370e-10 3.330669e-16 "
             "2.326810e-11 2.392370e-10 9.999999e-01 -4.440892e-16\n"
             "9.999978e-01 5.272628e-04 -2.066935e-03 -4.690294e-02 -5.296506e-04 9.999992e-01 -1.154865e-03 "
             "-2.839928e-02 2.066324e-03 1.155958e-03 9.999971e-01 8.586941e-01\n";
    }
    auto rows = read_pose_file((dir / "in.txt").string());
    write_pose_file((dir / "out.txt").string(), rows);
    auto back = read_pose_file((dir / "out.txt").string());
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_LE((back[i] - rows[i]).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(back[1](2, 3), 8.586941e-01);
}

TEST(Png, RoundTripsWithin8BitQuantisation) {
    auto dir = temp_dir("png");
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<Real> v(3 * 5 * 7);
    for (auto& x : v) x = u(rng);
    Tensor img({1, 3, 5, 7}, v);
    write_png((dir / "a.png").string(), img);
    auto back = read_png((dir / "a.png").string());
    ASSERT_EQ(back.shape(), img.shape());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(back[i] - v[i]), 0.5 / 255 + 1e-12);
}

TEST(Dataset, SaveLoadRoundTrip) {
    auto dir = temp_dir("dataset");
    auto ds = generate_sequence(SceneConfig{}, make_trajectory({.frames = 3, .velocity = Vec3(0.1, 0, 0)}));
    ds.meters_per_unit = 5;
    save_dataset(ds, dir.string());
    auto back = load_dataset(dir.string());
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back.intrinsics, ds.intrinsics);
    EXPECT_EQ(back.meters_per_unit, 5);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_TRUE(geom::approx_equal(back.poses[i], ds.poses[i], 1e-12));
        for (std::size_t p = 0; p < back.frames[i].depth->size(); ++p)
            EXPECT_FLOAT_EQ(float((*back.frames[i].depth)[p]), float((*ds.frames[i].depth)[p]));
    }
}

TEST(Kitti, LoadsLayoutAndRejectsPoseCountMismatch) {
    auto dir = temp_dir("kitti") / "sequences" / "07";
    fs::create_directories(dir / "image_2");
    for (std::size_t i = 0; i < 3; ++i) write_png((dir / "image_2" / frame_name(i, ".png")).string(), Tensor::full({1, 3, 6, 8}, 0.5));
    std::ofstream(dir / "calib.txt") << "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
                                     << "P2: 7.0e+02 0 3.5e+00 4.5e+01 0 7.1e+02 2.5e+00 -0.2 0 0 1 0.004\n";
    {
        std::ofstream f(dir / "poses.txt");
        for (int i = 0; i < 3; ++i) f << "1 0 0 " << i << " 0 1 0 0 0 0 1 0\n";
    }
    auto ds = load_kitti_sequence(dir.string());
    EXPECT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.intrinsics.fx, 700);
    EXPECT_EQ(ds.intrinsics.fy, 710);
    EXPECT_EQ(ds.intrinsics.cx, 3.5);
    EXPECT_EQ(ds.intrinsics.width, 8u);
    EXPECT_EQ(ds.poses[2].translation(), Vec3(2, 0, 0));
    {
        std::ofstream f(dir / "poses.txt");
        for (int i = 0; i < 2; ++i) f << "1 0 0 0 0 1 0 0 0 0 1 0\n";
    }
    EXPECT_THROW(load_kitti_sequence(dir.string()), Error);
}

TEST(Kitti, PosesFromSiblingPosesDirectory) {
    auto base = temp_dir("kitti_sibling");
    auto dir = base / "sequences" / "03";
    fs::create_directories(dir / "image_2");
    fs::create_directories(base / "poses");
    for (std::size_t i = 0; i < 2; ++i) write_png((dir / "image_2" / frame_name(i, ".png")).string(), Tensor::full({1, 3, 4, 4}, 0.2));
    std::ofstream(dir / "calib.txt") << "P2: 10 0 1.5 0 0 10 1.5 0 0 0 1 0\n";
    std::ofstream(base / "poses" / "03.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 1\n";
    auto ds = load_kitti_sequence(dir.string());
    ASSERT_TRUE(ds.has_poses());
    EXPECT_EQ(ds.poses[1].translation(), Vec3(0, 0, 1));
}
