#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gshield/detector.hpp"
#include "gshield/nn.hpp"

namespace gshield::purify {

enum class SkipMode { Add, Concat, None };

std::string to_string(SkipMode mode);
/// "add", "concat" or "none"; throws ConfigError otherwise.
SkipMode parse_skip_mode(const std::string& text);

/// Encoder stages: stride 2 on stages 1-4, stride 1 on stage 5, widths
/// 32/64/128/128/128, k3. The decoder mirrors it with transposed convs
/// (k4 s2 for the upsampling stages, k3 s1 for the bottleneck) and feeds
/// encoder stage i into the input of the matching decoder stage. The last
/// decoder layer starts at zero, so an untrained model outputs 0.5.
class PurifierModel {
public:
    static constexpr int kMultiple = 16;
    static constexpr std::array<int, 5> kWidths{32, 64, 128, 128, 128};

    static PurifierModel create(SkipMode skip, std::uint64_t seed);

    template <class T>
    static std::array<BasicVar<T>, 5> encode(const BasicParamGraph<T>& params, const BasicVar<T>& images);

    /// [B, 3, H, W] with H, W multiples of 16 -> restored [B, 3, H, W] in (0, 1).
    template <class T>
    static BasicVar<T> forward(const BasicParamGraph<T>& params, SkipMode skip, const BasicVar<T>& images);

    /// Any size: reflect-padded to a multiple of 16, then cropped back.
    Image purify(const Image& image) const;
    std::vector<Image> purify(std::span<const Image> images) const;

    /// Independent copy (parameters are not shared).
    PurifierModel clone() const;

    ParamGraph params;
    SkipMode skip = SkipMode::Add;
};

/// Four stride-2 convs (32/64/128/128) over [image, upscaled latent],
/// global average pooling and a dense logit. The latent (encoder stage 4,
/// 128 channels at 1/16 resolution) is upscaled to 4 channels by a k16 s16
/// transposed conv.
class Discriminator {
public:
    static constexpr int kLatentChannels = 4;

    static Discriminator create(std::uint64_t seed);

    template <class T>
    static BasicVar<T> logits(const BasicParamGraph<T>& params, const BasicVar<T>& images, const BasicVar<T>& latent);

    Discriminator clone() const;

    ParamGraph params;
};

struct PurifierTrainConfig {
    SkipMode skip = SkipMode::Add;
    int batch_size = 16;
    /// Random square crop taken at the same place in both images of a pair.
    int crop = 64;
    /// Applies the same random flip/transpose to both images of a pair.
    bool augment = true;
    double warmup_lr = 1e-4;
    int warmup_epochs = 50;
    double disc_lr = 5e-4;
    int disc_epochs = 50;
    double adv_lr = 2.5e-4;
    int adv_epochs = 40;
    double alpha_mse = 0.23;
    double alpha_proxy = 100.0;
    double alpha_adv = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// (poisoned, clean).
using ImagePair = std::pair<Image, Image>;

struct WarmupResult {
    PurifierModel model;
    std::vector<double> mse_curve;  ///< mean training MSE per epoch
};

/// Minimises the mean squared error between purified and clean images.
WarmupResult train_warmup(const std::vector<ImagePair>& pairs, const PurifierTrainConfig& config);
/// Continues MSE training of an existing model at `learning_rate` for `epochs`.
WarmupResult continue_warmup(const PurifierModel& start, const std::vector<ImagePair>& pairs,
                             const PurifierTrainConfig& config, double learning_rate, int epochs);

struct PretrainResult {
    Discriminator discriminator;
    std::vector<double> loss_curve;
    /// Fraction of clean (real) and purified (fake) training images the final
    /// discriminator classifies correctly.
    double accuracy = 0.0;
};

/// Trains the discriminator against the frozen purifier.
PretrainResult pretrain_discriminator(const PurifierModel& purifier, const std::vector<ImagePair>& pairs,
                                      const PurifierTrainConfig& config);

struct AdversarialEpoch {
    int epoch = 0;
    double disc_loss = 0.0;
    double gen_loss = 0.0;
    double mse = 0.0;
    double proxy = 0.0;
    double adv = 0.0;
};

struct AdversarialResult {
    PurifierModel model;
    Discriminator discriminator;
    std::vector<AdversarialEpoch> curve;
};

/// Alternating updates: the discriminator minimises
/// -log F(clean | c_clean) - log(1 - F(purified | c_purified)), then the purifier
/// minimises alpha_mse * MSE + alpha_proxy * proxy - alpha_adv * log F(purified | c_purified).
/// Throws NumericError when the discriminator loss stays below 1e-4 for 5 epochs.
AdversarialResult train_adversarial(const PurifierModel& warmup, const Discriminator& discriminator,
                                    const std::vector<ImagePair>& pairs, const detect::DetectorModel& detector,
                                    const PurifierTrainConfig& config);

/// Sum over detector layers 2 and 3 of the squared distance between
/// channel-normalised feature vectors, averaged over positions and batch.
template <class T>
BasicVar<T> perceptual_proxy_var(const BasicParamGraph<T>& detector_params, const BasicVar<T>& a,
                                 const BasicVar<T>& b);

double perceptual_proxy(const detect::DetectorModel& detector, const Image& a, const Image& b);

} // namespace gshield::purify
