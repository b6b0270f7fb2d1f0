#include <gtest/gtest.h>

#include <cmath>

#include "gshield/metrics.hpp"
#include "gshield/rng.hpp"

using namespace gshield;
using namespace gshield::metrics;

namespace {

Image random_image(int h, int w, Rng& rng) {
    Image img(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

Image smooth_image(int h, int w, Rng& rng) {
    Image img(h, w);
    const double fx = rng.uniform(0.05, 0.3), fy = rng.uniform(0.05, 0.3), ph = rng.uniform(0, 6);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                img.at(c, y, x) = static_cast<float>(0.5 + 0.4 * std::sin(fx * x + fy * y + ph + c));
    return img;
}

// SSIM evaluated window by window with an explicit 2-D weight table.
double ssim_naive(const Image& a, const Image& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double w2[11][11];
    double total_w = 0.0;
    for (int u = 0; u < win; ++u)
        for (int v = 0; v < win; ++v) {
            w2[u][v] = std::exp(-((u - 5) * (u - 5) + (v - 5) * (v - 5)) / (2 * sigma * sigma));
            total_w += w2[u][v];
        }
    double acc = 0.0;
    int count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int i = 0; i + win <= a.height; ++i)
            for (int j = 0; j + win <= a.width; ++j) {
                double ma = 0, mb = 0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        const double w = w2[u][v] / total_w;
                        ma += w * a.at(c, i + u, j + v);
                        mb += w * b.at(c, i + u, j + v);
                    }
                double va = 0, vb = 0, cov = 0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        const double w = w2[u][v] / total_w;
                        const double da = a.at(c, i + u, j + v) - ma, db = b.at(c, i + u, j + v) - mb;
                        va += w * da * da;
                        vb += w * db * db;
                        cov += w * da * db;
                    }
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return acc / count;
}

} // namespace

TEST(Psnr, AnalyticValues) {
    Image a(8, 8, 3, 0.5f), b(8, 8, 3, 0.6f);
    EXPECT_TRUE(std::isinf(psnr(a, a)));
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-4);
    Image c(8, 8, 3, 0.0f), d(8, 8, 3, 1.0f / 255.0f);
    EXPECT_NEAR(psnr(c, d), 20.0 * std::log10(255.0), 1e-4);
    EXPECT_NEAR(psnr(c, d), 48.1308, 1e-4);
    EXPECT_THROW(psnr(a, Image(8, 7)), ShapeError);
}

TEST(Psnr, SymmetricAndMonotoneInNoise) {
    Rng rng(1);
    const Image base = smooth_image(16, 16, rng);
    Image noise(16, 16);
    for (auto& v : noise.data) v = static_cast<float>(rng.uniform(-1, 1));
    double last = kPsnrIdentical;
    for (double amp : {0.01, 0.02, 0.05, 0.1}) {
        Image noisy = base;
        for (std::size_t i = 0; i < noisy.size(); ++i) noisy.data[i] += static_cast<float>(amp * noise.data[i]);
        EXPECT_EQ(psnr(base, noisy), psnr(noisy, base));
        EXPECT_LT(psnr(base, noisy), last);
        last = psnr(base, noisy);
    }
}

TEST(Ssim, IdentitySymmetryAndBounds) {
    Rng rng(2);
    const Image a = random_image(16, 16, rng), b = random_image(16, 16, rng);
    EXPECT_EQ(ssim(a, a), 1.0);
    EXPECT_EQ(ssim(a, b), ssim(b, a));
    EXPECT_GE(ssim(a, b), -1.0);
    EXPECT_LE(ssim(a, b), 1.0);
    EXPECT_GE(dssim(a, b), 0.0);
    EXPECT_LE(dssim(a, b), 1.0);
    EXPECT_NEAR(dssim(a, b), (1.0 - ssim(a, b)) / 2.0, 1e-15);
}

TEST(Ssim, MatchesPerWindowReference) {
    Rng rng(3);
    const Image a = random_image(16, 16, rng);
    Image b = a;
    for (auto& v : b.data) v = std::clamp(v + static_cast<float>(rng.uniform(-0.2, 0.2)), 0.0f, 1.0f);
    EXPECT_NEAR(ssim(a, b), ssim_naive(a, b), 1e-6);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
    EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), DataError);
}

TEST(Ssim, VarValueMatchesImageVersion) {
    Rng rng(4);
    const Image a = random_image(12, 15, rng), b = random_image(12, 15, rng);
    const auto v = ssim_var(Var::constant(a.to_tensor()), Var::constant(b.to_tensor()));
    EXPECT_NEAR(v.value()[0], ssim(a, b), 1e-6);
}

TEST(GaussianSmooth, ConstantAndNearDelta) {
    const Image flat(12, 12, 3, 0.3f);
    const Image out = gaussian_smooth(flat, 1.0);
    for (float v : out.data) EXPECT_NEAR(v, 0.3f, 1e-6);
    Rng rng(5);
    const Image img = random_image(12, 12, rng);
    const Image sharp = gaussian_smooth(img, 0.05);
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(sharp.data[i], img.data[i], 1e-4);
    EXPECT_THROW(gaussian_smooth(img, 0.0), ConfigError);
}

TEST(GaussianSmooth, ReducesTvAndPreservesMean) {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        Image img = trial % 2 ? random_image(20, 17, rng) : smooth_image(20, 17, rng);
        const Image out = gaussian_smooth(img, rng.uniform(0.5, 2.0));
        EXPECT_LT(tv_score(out), tv_score(img));
        double mi = 0, mo = 0;
        for (std::size_t i = 0; i < img.size(); ++i) {
            mi += img.data[i];
            mo += out.data[i];
        }
        EXPECT_NEAR(mi / img.size(), mo / img.size(), 1e-5);
    }
}

TEST(GaussianSmooth, IsLinear) {
    Rng rng(7);
    const Image a = random_image(10, 10, rng), b = random_image(10, 10, rng);
    Image mix(10, 10);
    for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = 2.0f * a.data[i] - 0.5f * b.data[i];
    const Image lhs = gaussian_smooth(mix, 1.0), sa = gaussian_smooth(a, 1.0), sb = gaussian_smooth(b, 1.0);
    for (std::size_t i = 0; i < mix.size(); ++i) EXPECT_NEAR(lhs.data[i], 2.0f * sa.data[i] - 0.5f * sb.data[i], 1e-5);
}

TEST(Aggregate, SingleRowAndAverage) {
    MetricRow r1{"s0", "clean", {{"psnr", 30.0}, {"gaussians", 100.0}}};
    auto single = aggregate({r1});
    ASSERT_EQ(single.summaries.size(), 1u);
    EXPECT_EQ(single.summaries[0].mean.at("psnr"), 30.0);
    EXPECT_EQ(single.summaries[0].median.at("gaussians"), 100.0);

    MetricRow r2{"s1", "clean", {{"psnr", 20.0}, {"gaussians", 300.0}}};
    MetricRow p1{"s0", "poisoned", {{"psnr", 18.0}, {"gaussians", 190.0}}};
    MetricRow p2{"s1", "poisoned", {{"psnr", 15.0}, {"gaussians", 600.0}}};
    auto report = aggregate({r1, r2, p1, p2});
    const auto* clean = report.find("clean");
    const auto* poisoned = report.find("poisoned");
    ASSERT_TRUE(clean && poisoned);
    EXPECT_EQ(clean->mean.at("psnr"), 25.0);
    EXPECT_DOUBLE_EQ(poisoned->ratio_to_clean.at("gaussians"), 395.0 / 200.0);
    EXPECT_DOUBLE_EQ(poisoned->median_ratio_to_clean.at("gaussians"), (1.9 + 2.0) / 2.0);
}

TEST(Aggregate, Errors) {
    EXPECT_THROW(aggregate({}), DataError);
    MetricRow a{"s0", "clean", {{"psnr", 1.0}}};
    MetricRow b{"s1", "clean", {{"ssim", 1.0}}};
    EXPECT_THROW(aggregate({a, b}), DataError);
}

TEST(Aggregate, ScenariosMayHaveTheirOwnColumns) {
    MetricRow c{"s0", "clean", {{"psnr", 30.0}}};
    MetricRow a{"s0", "attack", {{"tv_ratio", 5.0}, {"psnr", 15.0}}};
    const auto report = aggregate({c, a});
    const auto* attack = report.find("attack");
    ASSERT_NE(attack, nullptr);
    EXPECT_EQ(attack->median.at("tv_ratio"), 5.0);
    EXPECT_EQ(attack->ratio_to_clean.at("psnr"), 0.5);
    EXPECT_FALSE(attack->ratio_to_clean.contains("tv_ratio"));
}
