#include "gshield/detector.hpp"

#include <algorithm>
#include <cmath>

#include "gshield/error.hpp"

namespace gshield::detect {

namespace {

constexpr int kWidths[4] = {16, 32, 64, 64};

Image random_crop(const Image& img, int size, Rng& rng) {
    if (img.height < size || img.width < size) {
        throw DataError("detector: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        " is smaller than the crop size " + std::to_string(size));
    }
    const int top = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.height - size + 1)));
    const int left = static_cast<int>(rng.below(static_cast<std::uint64_t>(img.width - size + 1)));
    return crop(img, top, left, size, size);
}

} // namespace

DetectorModel DetectorModel::create(std::uint64_t seed) {
    Rng rng(seed);
    DetectorModel model;
    int cin = 3;
    for (int i = 0; i < 4; ++i) {
        nn::add_conv(model.params, "conv" + std::to_string(i + 1), cin, kWidths[i], 3, rng);
        cin = kWidths[i];
    }
    nn::add_dense(model.params, "head", cin, 1, rng, true);
    return model;
}

template <class T>
DetectorOutputs<T> DetectorModel::forward(const BasicParamGraph<T>& params, const BasicVar<T>& images) {
    const auto& shape = images.shape();
    if (shape.size() != 4 || shape[1] != 3) throw ShapeError("detector: expected [B, 3, H, W], got " + shape_str(shape));
    if (shape[2] < kMinSize || shape[3] < kMinSize) {
        throw ShapeError("detector: inputs must be at least 16x16, got " + shape_str(shape));
    }
    DetectorOutputs<T> out;
    auto h = nn::leaky(nn::conv(params, "conv1", images, 2, 1));
    h = nn::leaky(nn::conv(params, "conv2", h, 2, 1));
    out.layer2 = h;
    h = nn::leaky(nn::conv(params, "conv3", h, 2, 1));
    out.layer3 = h;
    h = nn::leaky(nn::conv(params, "conv4", h, 2, 1));
    out.logits = nn::dense(params, "head", ops::global_avg_pool(h));
    return out;
}

template DetectorOutputs<float> DetectorModel::forward(const BasicParamGraph<float>&, const BasicVar<float>&);
template DetectorOutputs<double> DetectorModel::forward(const BasicParamGraph<double>&, const BasicVar<double>&);

std::vector<double> DetectorModel::probabilities(const Tensor& batch) const {
    NoGradGuard guard;
    const auto logits = forward(params, Var::constant(batch)).logits.value();
    std::vector<double> out(static_cast<std::size_t>(logits.numel()));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits[static_cast<std::int64_t>(i)])));
    return out;
}

void DetectorTrainConfig::validate() const {
    if (!(learning_rate > 0.0) || epochs <= 0 || batch_size < 2 || crop < DetectorModel::kMinSize) {
        throw ConfigError("detector: learning_rate, epochs, batch_size (>= 2) and crop (>= 16) must be positive");
    }
}

DetectorTrainResult train_detector(const std::vector<corpus::LabeledItem>& train, const DetectorTrainConfig& config) {
    config.validate();
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < train.size(); ++i) {
        const int label = train[i].label;
        if (label != 0 && label != 1) throw DataError("detector: labels must be 0 or 1");
        by_class[label].push_back(i);
    }
    if (by_class[0].empty() || by_class[1].empty()) {
        throw DataError("detector: training data must contain both clean and poisoned images");
    }

    Rng rng(config.seed);
    DetectorTrainResult result{DetectorModel::create(rng.next_u64()), {}};
    AdamState adam;
    adam.config.lr = config.learning_rate;
    const int half = config.batch_size / 2;
    const auto steps = std::max<std::size_t>(1, (train.size() + static_cast<std::size_t>(config.batch_size) - 1) /
                                                    static_cast<std::size_t>(config.batch_size));
    std::size_t cursor[2] = {0, 0};
    for (auto& c : by_class) rng.shuffle(c.begin(), c.end());

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t step = 0; step < steps; ++step) {
            std::vector<Image> crops;
            Tensor labels({2 * half, 1});
            for (int k = 0; k < 2 * half; ++k) {
                const int label = k < half ? 0 : 1;
                auto& pool = by_class[label];
                if (cursor[label] == pool.size()) {
                    rng.shuffle(pool.begin(), pool.end());
                    cursor[label] = 0;
                }
                crops.push_back(random_crop(train[pool[cursor[label]++]].image, config.crop, rng));
                labels[k] = static_cast<float>(label);
            }
            result.model.params.zero_grad();
            const auto out = DetectorModel::forward(result.model.params, Var::constant(stack_images(crops)));
            const auto loss = ops::bce_with_logits(out.logits, labels);
            if (!std::isfinite(loss.value()[0])) {
                throw NumericError("detector: non-finite loss at epoch " + std::to_string(epoch));
            }
            loss.backward();
            adam_step(result.model.params, adam);
            loss_sum += loss.value()[0];
            for (int k = 0; k < 2 * half; ++k) correct += (out.logits.value()[k] > 0.0f) == (labels[k] > 0.5f);
            seen += static_cast<std::size_t>(2 * half);
        }
        result.curve.push_back({epoch, loss_sum / static_cast<double>(steps), static_cast<double>(correct) / seen});
    }
    return result;
}

Detection detect(const DetectorModel& model, const Image& image, const CropPolicy& policy) {
    if (policy.crops <= 0) throw ConfigError("detector: crop count must be positive");
    Rng rng(policy.seed);
    std::vector<Image> crops;
    for (int k = 0; k < policy.crops; ++k) crops.push_back(random_crop(image, policy.size, rng));
    const auto probs = model.probabilities(stack_images(crops));
    double mean = 0.0;
    for (double p : probs) mean += p;
    mean /= static_cast<double>(probs.size());
    return {mean, mean > 0.5 ? 1 : 0};
}

DetectionReport score_predictions(const std::vector<int>& labels, const std::vector<int>& predicted) {
    if (labels.size() != predicted.size()) throw ShapeError("score_predictions: label and prediction counts differ");
    DetectionReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool truth = labels[i] == 1, guess = predicted[i] == 1;
        if (truth && guess) ++r.true_positive;
        else if (!truth && guess) ++r.false_positive;
        else if (!truth) ++r.true_negative;
        else ++r.false_negative;
    }
    auto ratio = [](std::size_t num, std::size_t den) { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; };
    r.accuracy = ratio(r.true_positive + r.true_negative, r.total());
    r.precision = ratio(r.true_positive, r.true_positive + r.false_positive);
    r.recall = ratio(r.true_positive, r.true_positive + r.false_negative);
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

DetectionReport evaluate_detector(const DetectorModel& model, const std::vector<corpus::LabeledItem>& items,
                                  const CropPolicy& policy) {
    if (items.empty()) throw DataError("evaluate_detector: no items");
    std::vector<int> labels, predicted;
    Rng rng(policy.seed);
    for (const auto& item : items) {
        CropPolicy p = policy;
        p.seed = rng.next_u64();
        labels.push_back(item.label);
        predicted.push_back(detect(model, item.image, p).label);
    }
    return score_predictions(labels, predicted);
}

} // namespace gshield::detect
