#pragma once

#include <cstdint>
#include <vector>

#include "gshield/corpus.hpp"
#include "gshield/nn.hpp"

namespace gshield::detect {

template <class T>
struct DetectorOutputs {
    BasicVar<T> layer2;  ///< after the second conv block
    BasicVar<T> layer3;  ///< after the third conv block
    BasicVar<T> logits;  ///< [B, 1]
};

/// Four stride-2 conv blocks (16/32/64/64, k3, leaky ReLU), global average
/// pooling and a dense head to one logit. The head starts at zero.
class DetectorModel {
public:
    static constexpr int kMinSize = 16;

    static DetectorModel create(std::uint64_t seed);

    template <class T>
    static DetectorOutputs<T> forward(const BasicParamGraph<T>& params, const BasicVar<T>& images);

    /// Sigmoid probabilities for a [B, 3, H, W] batch, no graph recorded.
    std::vector<double> probabilities(const Tensor& batch) const;

    ParamGraph params;
};

struct DetectorTrainConfig {
    double learning_rate = 1e-4;
    int epochs = 50;
    int batch_size = 16;
    int crop = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DetectorEpoch {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct DetectorTrainResult {
    DetectorModel model;
    std::vector<DetectorEpoch> curve;
};

/// Mean BCE with class-balanced batches (half clean, half poisoned) of random crops.
DetectorTrainResult train_detector(const std::vector<corpus::LabeledItem>& train, const DetectorTrainConfig& config);

struct CropPolicy {
    int crops = 4;
    int size = 64;
    std::uint64_t seed = 0;
};

struct Detection {
    double probability = 0.0;
    int label = 0;
};

/// Mean probability over `crops` random crops; label = probability > 0.5.
Detection detect(const DetectorModel& model, const Image& image, const CropPolicy& policy);

struct DetectionReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t true_positive = 0;
    std::size_t false_positive = 0;
    std::size_t true_negative = 0;
    std::size_t false_negative = 0;

    std::size_t total() const { return true_positive + false_positive + true_negative + false_negative; }
};

/// Positive class is "poisoned" (label 1). Undefined ratios are reported as 0.
DetectionReport score_predictions(const std::vector<int>& labels, const std::vector<int>& predicted);

DetectionReport evaluate_detector(const DetectorModel& model, const std::vector<corpus::LabeledItem>& items,
                                  const CropPolicy& policy);

} // namespace gshield::detect
