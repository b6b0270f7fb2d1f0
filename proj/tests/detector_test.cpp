#include <gtest/gtest.h>

#include <cmath>

#include "gshield/detector.hpp"
#include "gshield/error.hpp"
#include "gshield/numerics/grad_check.hpp"

using namespace gshield;
using namespace gshield::detect;

namespace {

Image flat(int size, float value) { return Image(size, size, 3, value); }

Image checker(int size, float lo, float hi) {
    Image img(size, size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) img.at(c, y, x) = ((x + y) % 2) ? hi : lo;
    return img;
}

std::vector<corpus::LabeledItem> toy_items(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<corpus::LabeledItem> items;
    for (int i = 0; i < n; ++i) {
        const float base = static_cast<float>(rng.uniform(0.2, 0.8));
        items.push_back({flat(32, base), 0});
        items.push_back({checker(32, base - 0.15f, base + 0.15f), 1});
    }
    return items;
}

} // namespace

TEST(DetectorModel, ZeroHeadGivesOneHalf) {
    const auto model = DetectorModel::create(3);
    Rng rng(1);
    Image img(32, 32);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    const auto d = detect::detect(model, img, {4, 32, 0});
    EXPECT_DOUBLE_EQ(d.probability, 0.5);
    EXPECT_EQ(d.label, 0);
}

TEST(DetectorModel, FeatureShapes) {
    const auto model = DetectorModel::create(0);
    const auto out = DetectorModel::forward(model.params, Var::constant(Tensor({2, 3, 64, 64})));
    EXPECT_EQ(out.layer2.shape(), (Shape{2, 32, 16, 16}));
    EXPECT_EQ(out.layer3.shape(), (Shape{2, 64, 8, 8}));
    EXPECT_EQ(out.logits.shape(), (Shape{2, 1}));
}

TEST(DetectorModel, RejectsBadInputs) {
    const auto model = DetectorModel::create(0);
    EXPECT_THROW(DetectorModel::forward(model.params, Var::constant(Tensor({1, 1, 32, 32}))), ShapeError);
    EXPECT_THROW(DetectorModel::forward(model.params, Var::constant(Tensor({1, 3, 8, 8}))), ShapeError);
    EXPECT_THROW(detect::detect(model, flat(32, 0.5f), {4, 64, 0}), DataError);
    EXPECT_THROW(detect::detect(model, flat(32, 0.5f), {0, 32, 0}), ConfigError);
}

TEST(DetectorModel, GradientMatchesFiniteDifferences) {
    Rng rng(4);
    auto model = DetectorModel::create(5);
    auto params = nn::cast_params<double>(model.params);
    for (const auto& [name, var] : params.entries()) {
        if (name == "head.w") {
            auto& w = const_cast<VarD&>(var).mutable_value();
            for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-0.5, 0.5);
        }
    }
    TensorD x({1, 3, 16, 16});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform();
    const auto report = grad_check(
        [&](const std::vector<VarD>& in) {
            return ops::sum(DetectorModel::forward(params, in[0]).logits);
        },
        {{"image", x}}, 1e-3);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(DetectorTraining, SeparatesToyClasses) {
    DetectorTrainConfig config;
    config.learning_rate = 1e-3;
    config.epochs = 15;
    config.crop = 32;
    config.seed = 7;
    const auto result = train_detector(toy_items(32, 1), config);
    ASSERT_EQ(result.curve.size(), 15u);
    EXPECT_LT(result.curve.back().loss, result.curve.front().loss);
    const auto report = evaluate_detector(result.model, toy_items(50, 2), {4, 32, 0});
    EXPECT_GE(report.accuracy, 0.99);
    EXPECT_EQ(report.total(), 100u);
}

TEST(DetectorTraining, Deterministic) {
    DetectorTrainConfig config;
    config.epochs = 2;
    config.crop = 32;
    const auto a = train_detector(toy_items(8, 1), config);
    const auto b = train_detector(toy_items(8, 1), config);
    for (std::size_t i = 0; i < a.model.params.size(); ++i) {
        const auto& ta = a.model.params.entries()[i].second.value();
        const auto& tb = b.model.params.entries()[i].second.value();
        for (std::int64_t k = 0; k < ta.numel(); ++k) ASSERT_EQ(ta[k], tb[k]);
    }
}

TEST(DetectorTraining, RejectsSingleClassAndBadConfig) {
    auto items = toy_items(4, 1);
    std::erase_if(items, [](const corpus::LabeledItem& it) { return it.label == 1; });
    DetectorTrainConfig config;
    config.crop = 32;
    EXPECT_THROW(train_detector(items, config), DataError);
    config.epochs = 0;
    EXPECT_THROW(train_detector(toy_items(4, 1), config), ConfigError);
}

TEST(DetectionReport, HandComputedCounts) {
    const auto r = score_predictions({1, 1, 1, 0, 0, 0, 0, 1}, {1, 1, 0, 0, 0, 1, 0, 1});
    EXPECT_EQ(r.true_positive, 3u);
    EXPECT_EQ(r.false_negative, 1u);
    EXPECT_EQ(r.false_positive, 1u);
    EXPECT_EQ(r.true_negative, 3u);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
    EXPECT_DOUBLE_EQ(r.precision, 0.75);
    EXPECT_DOUBLE_EQ(r.recall, 0.75);
    EXPECT_DOUBLE_EQ(r.f1, 0.75);
}

TEST(DetectionReport, DegenerateRatiosAreZero) {
    const auto r = score_predictions({0, 0}, {0, 0});
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.precision, 0.0);
    EXPECT_DOUBLE_EQ(r.recall, 0.0);
    EXPECT_DOUBLE_EQ(r.f1, 0.0);
    EXPECT_THROW(score_predictions({0}, {0, 1}), ShapeError);
}
