#include <gtest/gtest.h>

#include "egolab/augment/noise_patches.hpp"
#include "egolab/diffcore/ops.hpp"
#include "test_util.hpp"

using namespace egolab;
using namespace egolab::aug;

TEST(SampleMask, ZeroCoverageIsEmpty) {
    std::mt19937_64 rng(1);
    auto m = sample_mask(AugmentPolicy{.coverage = 0, .patch_side = 5, .enabled = true}, rng, 32, 32);
    EXPECT_EQ(m.mask.count(), 0u);
    EXPECT_EQ(m.achieved_coverage, 0);
    auto off = sample_mask(AugmentPolicy{.coverage = 0.4, .patch_side = 5, .enabled = false}, rng, 32, 32);
    EXPECT_EQ(off.mask.count(), 0u);
}

TEST(SampleMask, FullResolutionExampleBound) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 50; ++i) {
        auto m = sample_mask(AugmentPolicy{.coverage = 0.2, .patch_side = 21, .enabled = true}, rng, 320, 320);
        EXPECT_GE(m.achieved_coverage, 0.2);
        EXPECT_LE(m.achieved_coverage, 0.2 + 441.0 / 102400.0);
    }
}

TEST(SampleMask, CoverageBoundsOverManySamples) {
    const std::size_t h = 64, w = 64, side = 13;
    const double slack = double(side * side) / double(h * w);
    std::mt19937_64 rng(3);
    for (double p : {0.1, 0.2, 0.4, 0.6, 0.8}) {
        for (int i = 0; i < 1000; ++i) {
            auto m = sample_mask(AugmentPolicy{.coverage = p, .patch_side = side, .enabled = true}, rng, h, w);
            ASSERT_GE(m.achieved_coverage, p) << p;
            ASSERT_LE(m.achieved_coverage, p + slack) << p;
            ASSERT_EQ(m.achieved_coverage, double(m.mask.count()) / double(h * w));
        }
    }
}

TEST(SampleMask, ReachesHighCoverageAndCornersAreReachable) {
    std::mt19937_64 rng(4);
    std::size_t corner = 0;
    for (int i = 0; i < 200; ++i) {
        auto m = sample_mask(AugmentPolicy{.coverage = 0.95, .patch_side = 8, .enabled = true}, rng, 32, 32);
        EXPECT_GE(m.achieved_coverage, 0.95);
        corner += m.mask[0];
    }
    EXPECT_GT(corner, 100u);
}

TEST(SampleMask, PolicyValidation) {
    std::mt19937_64 rng(5);
    EXPECT_THROW(sample_mask(AugmentPolicy{.coverage = 0.99, .patch_side = 4, .enabled = true}, rng, 16, 16), Error);
    EXPECT_THROW(sample_mask(AugmentPolicy{.coverage = 0.2, .patch_side = 17, .enabled = true}, rng, 16, 16), Error);
    EXPECT_THROW(sample_mask(AugmentPolicy{.coverage = 0.2, .patch_side = 0, .enabled = true}, rng, 16, 16), Error);
    auto p = nlohmann::json::parse(R"({"coverage": 0.3, "patch_side": 9})").get<AugmentPolicy>();
    EXPECT_TRUE(p.enabled);
    EXPECT_TRUE(p.apply_to_depth);
}

TEST(ApplyObfuscation, EmptyMaskIsIdentity) {
    std::mt19937_64 rng(6);
    auto img = testutil::random_tensor(rng, {1, 3, 16, 16}, 0, 1);
    auto dep = testutil::random_tensor(rng, {1, 1, 16, 16}, 0.5, 2);
    ObfuscationMask m{diff::Mask({16, 16}, false), 0, 0};
    auto out = apply_obfuscation(img, dep, m, rng);
    EXPECT_EQ(out.image.data(), img.data());
    EXPECT_EQ(out.depth->data(), dep.data());
}

TEST(ApplyObfuscation, MaskedPixelsReplacedUnmaskedBitIdentical) {
    std::mt19937_64 rng(7);
    const std::size_t h = 32, w = 32, n = h * w;
    auto img = testutil::random_tensor(rng, {1, 3, h, w}, 0, 1);
    auto dep = testutil::random_tensor(rng, {1, 1, h, w}, 0.5, 2);
    auto m = sample_mask(AugmentPolicy{.coverage = 0.95, .patch_side = 6, .enabled = true}, rng, h, w);
    auto out = apply_obfuscation(img, dep, m, rng);
    std::size_t unchanged = 0;
    for (std::size_t i = 0; i < n; ++i) {
        bool same = true;
        for (std::size_t c = 0; c < 3; ++c) same &= out.image[c * n + i] == img[c * n + i];
        if (!m.mask[i]) {
            EXPECT_TRUE(same);
            EXPECT_EQ(out.depth->data()[i], dep[i]);
        } else {
            EXPECT_FALSE(same);
            EXPECT_NE(out.depth->data()[i], dep[i]);
        }
        unchanged += same;
    }
    EXPECT_LE(double(unchanged) / double(n), 0.05);

    auto rgb_only = apply_obfuscation(img, dep, m, rng, false);
    EXPECT_EQ(rgb_only.depth->data(), dep.data());
}

TEST(ApplyObfuscation, NoiseStaysInRangeOverAMillionSamples) {
    std::mt19937_64 rng(8);
    const std::size_t h = 100, w = 100;
    ObfuscationMask m{diff::Mask({h, w}, true), 1.0, 1};
    auto img = diff::Tensor::full({1, 3, h, w}, 0.5);
    std::vector<Real> dv(h * w);
    for (std::size_t i = 0; i < dv.size(); ++i) dv[i] = 0.7 + 0.6 * double(i) / double(dv.size() - 1);
    diff::Tensor dep({1, 1, h, w}, dv);
    double lo = 1, hi = 0, dlo = 10, dhi = 0;
    std::size_t samples = 0;
    while (samples < 1'000'000) {
        auto out = apply_obfuscation(img, dep, m, rng);
        for (Real v : out.image.data()) lo = std::min(lo, v), hi = std::max(hi, v);
        for (Real v : out.depth->data()) dlo = std::min(dlo, v), dhi = std::max(dhi, v);
        samples += out.image.size();
    }
    EXPECT_GE(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_LT(lo, 1e-4);
    EXPECT_GT(hi, 1 - 1e-4);
    EXPECT_GE(dlo, 0.7);
    EXPECT_LE(dhi, 1.3);
}

TEST(ApplyObfuscation, FreshMasksAreIndependent) {
    std::mt19937_64 rng(9);
    AugmentPolicy p{.coverage = 0.3, .patch_side = 8, .enabled = true};
    auto a = sample_mask(p, rng, 32, 32), b = sample_mask(p, rng, 32, 32);
    EXPECT_NE(a.mask.bits, b.mask.bits);
}
