#include <gtest/gtest.h>

#include <atomic>

#include "gshield/corpus.hpp"
#include "gshield/error.hpp"
#include "gshield/pipeline.hpp"

using namespace gshield;
using namespace gshield::pipeline;

namespace {

detect::DetectorModel biased_detector(float bias) {
    auto model = detect::DetectorModel::create(1);
    auto named = nn::to_named(model.params);
    named.at("head.b")[0] = bias;
    nn::from_named(model.params, named);
    return model;
}

std::vector<Image> views(int n, int size, std::uint64_t seed) { return corpus::generate_scene(n, size, seed, "s").views; }

Image perturbed(const Image& img, std::uint64_t seed) {
    Rng rng(seed);
    Image out = img;
    for (auto& v : out.data) v = std::clamp(v + static_cast<float>(rng.uniform(-0.1, 0.1)), 0.0f, 1.0f);
    return out;
}

splat::VictimConfig tiny_victim() {
    splat::VictimConfig v;
    v.iterations = 80;
    v.densify_interval = 20;
    v.initial_gaussians = 16;
    v.seed = 5;
    return v;
}

} // namespace

TEST(Remedy, CleanLabelledImagesPassThroughBitIdentical) {
    const auto images = views(3, 32, 1);
    const auto purifier = purify::PurifierModel::create(purify::SkipMode::Add, 2);
    const auto result = remedy(images, biased_detector(-20.0f), purifier, {2, 32, 3});
    ASSERT_EQ(result.images.size(), images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        EXPECT_FALSE(result.decisions[i].flagged);
        EXPECT_FALSE(result.decisions[i].purified);
        EXPECT_EQ(result.images[i], images[i]);
    }
}

TEST(Remedy, FlaggedImagesArePurified) {
    const auto images = views(3, 32, 2);
    const auto purifier = purify::PurifierModel::create(purify::SkipMode::Add, 2);
    const auto result = remedy(images, biased_detector(20.0f), purifier, {2, 32, 3});
    for (std::size_t i = 0; i < images.size(); ++i) {
        EXPECT_TRUE(result.decisions[i].flagged);
        EXPECT_TRUE(result.decisions[i].purified);
        EXPECT_EQ(result.images[i], purifier.purify(images[i]));
        EXPECT_GT(result.decisions[i].probability, 0.99);
    }
}

TEST(Remedy, BypassMaskSkipsPurification) {
    const auto images = views(4, 32, 3);
    const auto purifier = purify::PurifierModel::create(purify::SkipMode::Add, 2);
    const auto result = remedy(images, biased_detector(20.0f), purifier, {1, 32, 3}, {true, false, true, false});
    EXPECT_EQ(result.images[0], images[0]);
    EXPECT_NE(result.images[1], images[1]);
    EXPECT_TRUE(result.decisions[0].flagged);
    EXPECT_FALSE(result.decisions[0].purified);
    EXPECT_THROW(remedy(images, biased_detector(20.0f), purifier, {1, 32, 3}, {true}), DataError);
}

TEST(Remedy, SmallImagesUseWholeImageCrops) {
    const std::vector<Image> images{crop(views(1, 32, 4)[0], 0, 0, 24, 20)};
    const auto purifier = purify::PurifierModel::create(purify::SkipMode::Add, 2);
    EXPECT_NO_THROW(remedy(images, biased_detector(0.0f), purifier, {2, 64, 3}));
}

TEST(Evaluate, EmitsOneRowPerScenarioWithFixedColumns) {
    SceneInputs scene{"s0", views(2, 32, 5), {}};
    for (std::size_t i = 0; i < scene.clean.size(); ++i) scene.poisoned.push_back(perturbed(scene.clean[i], i));
    const auto detector = biased_detector(20.0f);
    const auto purifier = purify::PurifierModel::create(purify::SkipMode::Add, 2);
    EvalConfig config{tiny_victim(), 1.0, 1};
    const auto eval = evaluate_scene(scene, config, {&detector, &purifier, {1, 32, 9}});
    ASSERT_EQ(eval.rows.size(), 5u);
    const std::vector<std::string> names{"clean", "poisoned", "smoothed", "limited", "remedied"};
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(eval.rows[i].scenario, names[i]);
        EXPECT_EQ(eval.rows[i].scene, "s0");
        for (const char* column : {"gaussians", "model_bytes", "psnr", "ssim", "proxy", "input_psnr", "input_tv"}) {
            EXPECT_TRUE(eval.rows[i].values.contains(column)) << column;
        }
    }
    EXPECT_EQ(eval.decisions.size(), 1u);
    EXPECT_EQ(eval.fit_seconds.size(), 5u);
    EXPECT_LE(eval.rows[3].values.at("gaussians"), eval.rows[0].values.at("gaussians"));
    EXPECT_EQ(eval.rows[0].values.at("input_psnr"), 100.0);
    EXPECT_LT(eval.rows[2].values.at("input_tv"), eval.rows[1].values.at("input_tv"));
}

TEST(Evaluate, IsDeterministic) {
    SceneInputs scene{"s1", views(1, 32, 6), {}};
    scene.poisoned.push_back(perturbed(scene.clean[0], 1));
    const Scenario subset[] = {Scenario::Clean, Scenario::Poisoned};
    EvalConfig config{tiny_victim(), 1.0, 0};
    const auto a = evaluate_scene(scene, config, {}, subset);
    const auto b = evaluate_scene(scene, config, {}, subset);
    ASSERT_EQ(a.rows.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(a.rows[i].values.at("gaussians"), b.rows[i].values.at("gaussians"));
        EXPECT_EQ(a.rows[i].values.at("psnr"), b.rows[i].values.at("psnr"));
        EXPECT_FALSE(a.rows[i].values.contains("proxy"));
    }
}

TEST(Evaluate, RejectsInconsistentRequests) {
    SceneInputs scene{"s2", views(1, 32, 7), {}};
    scene.poisoned = scene.clean;
    EvalConfig config{tiny_victim(), 1.0, 0};
    const Scenario limited_only[] = {Scenario::Limited};
    EXPECT_THROW(evaluate_scene(scene, config, {}, limited_only), ConfigError);
    const Scenario remedied[] = {Scenario::Remedied};
    EXPECT_THROW(evaluate_scene(scene, config, {}, remedied), ConfigError);
    scene.poisoned.clear();
    EXPECT_THROW(evaluate_scene(scene, config, {}), DataError);
}

TEST(ParallelFor, VisitsEveryIndexAndRethrows) {
    for (int jobs : {1, 3}) {
        std::vector<std::atomic<int>> hits(50);
        parallel_for(hits.size(), jobs, [&](std::size_t i) { ++hits[i]; });
        for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
        EXPECT_THROW(parallel_for(10, jobs,
                                  [](std::size_t i) {
                                      if (i == 7) throw DataError("boom");
                                  }),
                     DataError);
    }
}
