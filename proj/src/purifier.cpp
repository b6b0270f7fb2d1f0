#include "gshield/purifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gshield/error.hpp"

namespace gshield::purify {

namespace {

constexpr std::uint64_t kWarmupStream = 1;
constexpr std::uint64_t kPretrainStream = 2;
constexpr std::uint64_t kAdversarialStream = 3;
constexpr std::array<int, 4> kDiscWidths{32, 64, 128, 128};
constexpr int kCollapseEpochs = 5;
constexpr double kCollapseLoss = 1e-4;

int round_up(int n, int m) { return (n + m - 1) / m * m; }

template <class T>
BasicVar<T> join(SkipMode skip, const BasicVar<T>& decoder, const BasicVar<T>& encoder) {
    switch (skip) {
        case SkipMode::Add: return ops::add(decoder, encoder);
        case SkipMode::Concat: return ops::concat_channels(decoder, encoder);
        case SkipMode::None: break;
    }
    return decoder;
}

void check_pairs(const std::vector<ImagePair>& pairs, int crop) {
    if (pairs.empty()) throw DataError("purifier: no training pairs");
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [poisoned, clean] = pairs[i];
        if (!poisoned.same_shape(clean) || poisoned.channels != 3) {
            throw DataError("purifier: pair " + std::to_string(i) + " is not a matching pair of RGB images");
        }
        if (poisoned.height < crop || poisoned.width < crop) {
            throw DataError("purifier: pair " + std::to_string(i) + " is smaller than the training crop " +
                            std::to_string(crop));
        }
    }
}

/// One of the 8 square symmetries: optional transpose, then optional flips.
Image dihedral(const Image& img, unsigned code) {
    const bool transpose = code & 1u, flip_y = code & 2u, flip_x = code & 4u;
    const int h = transpose ? img.width : img.height, w = transpose ? img.height : img.width;
    Image out(h, w, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = flip_y ? h - 1 - y : y, sx = flip_x ? w - 1 - x : x;
                out.at(c, y, x) = transpose ? img.at(c, sx, sy) : img.at(c, sy, sx);
            }
    return out;
}

struct Batch {
    Tensor poisoned;
    Tensor clean;
    std::int64_t size = 0;
};

/// Shuffled pass over the pairs with a random crop shared by both images of a pair.
class Batcher {
public:
    Batcher(const std::vector<ImagePair>& pairs, const PurifierTrainConfig& config, Rng rng)
        : pairs_(pairs), batch_(static_cast<std::size_t>(config.batch_size)), crop_(config.crop),
          augment_(config.augment), rng_(rng) {}

    std::size_t steps() const { return (pairs_.size() + batch_ - 1) / batch_; }

    void start_epoch() {
        order_.resize(pairs_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        rng_.shuffle(order_.begin(), order_.end());
    }

    Batch batch(std::size_t step) {
        std::vector<Image> poisoned, clean;
        const std::size_t end = std::min(order_.size(), (step + 1) * batch_);
        for (std::size_t k = step * batch_; k < end; ++k) {
            const auto& [p, c] = pairs_[order_[k]];
            const int top = static_cast<int>(rng_.below(static_cast<std::uint64_t>(p.height - crop_ + 1)));
            const int left = static_cast<int>(rng_.below(static_cast<std::uint64_t>(p.width - crop_ + 1)));
            poisoned.push_back(crop(p, top, left, crop_, crop_));
            clean.push_back(crop(c, top, left, crop_, crop_));
            if (augment_) {
                const auto code = static_cast<unsigned>(rng_.below(8));
                poisoned.back() = dihedral(poisoned.back(), code);
                clean.back() = dihedral(clean.back(), code);
            }
        }
        return {stack_images(poisoned), stack_images(clean), static_cast<std::int64_t>(poisoned.size())};
    }

private:
    const std::vector<ImagePair>& pairs_;
    std::size_t batch_;
    int crop_;
    bool augment_;
    Rng rng_;
    std::vector<std::size_t> order_;
};

double scalar(const Var& v) { return static_cast<double>(v.value()[0]); }

void require_finite(double loss, const std::string& stage, int epoch) {
    if (!std::isfinite(loss)) throw NumericError("purifier: non-finite " + stage + " loss at epoch " + std::to_string(epoch));
}

Tensor constant_labels(std::int64_t n, float value) { return Tensor({n, 1}, value); }

Var stage4_latent(const ParamGraph& purifier, const Tensor& images) {
    NoGradGuard guard;
    return Var::constant(PurifierModel::encode(purifier, Var::constant(images))[3].value());
}

} // namespace

std::string to_string(SkipMode mode) {
    switch (mode) {
        case SkipMode::Add: return "add";
        case SkipMode::Concat: return "concat";
        case SkipMode::None: return "none";
    }
    return "add";
}

SkipMode parse_skip_mode(const std::string& text) {
    if (text == "add") return SkipMode::Add;
    if (text == "concat") return SkipMode::Concat;
    if (text == "none") return SkipMode::None;
    throw ConfigError("unknown skip mode '" + text + "' (expected add, concat or none)");
}

PurifierModel PurifierModel::create(SkipMode skip, std::uint64_t seed) {
    Rng rng(seed);
    PurifierModel model;
    model.skip = skip;
    int cin = 3;
    for (int i = 0; i < 5; ++i) {
        nn::add_conv(model.params, "enc" + std::to_string(i + 1), cin, kWidths[i], 3, rng);
        cin = kWidths[i];
    }
    const int factor = skip == SkipMode::Concat ? 2 : 1;
    nn::add_conv_transpose(model.params, "dec5", kWidths[4], kWidths[3], 3, 1, rng);
    nn::add_conv_transpose(model.params, "dec4", kWidths[3] * factor, kWidths[2], 4, 2, rng);
    nn::add_conv_transpose(model.params, "dec3", kWidths[2] * factor, kWidths[1], 4, 2, rng);
    nn::add_conv_transpose(model.params, "dec2", kWidths[1] * factor, kWidths[0], 4, 2, rng);
    nn::add_conv_transpose(model.params, "dec1", kWidths[0] * factor, 3, 4, 2, rng, true);
    return model;
}

template <class T>
std::array<BasicVar<T>, 5> PurifierModel::encode(const BasicParamGraph<T>& params, const BasicVar<T>& images) {
    const auto& shape = images.shape();
    if (shape.size() != 4 || shape[1] != 3) throw ShapeError("purifier: expected [B, 3, H, W], got " + shape_str(shape));
    if (shape[2] % kMultiple != 0 || shape[3] % kMultiple != 0 || shape[2] == 0 || shape[3] == 0) {
        throw ShapeError("purifier: height and width must be positive multiples of 16, got " + shape_str(shape));
    }
    std::array<BasicVar<T>, 5> stages;
    auto h = images;
    for (int i = 0; i < 5; ++i) {
        h = nn::leaky(nn::conv(params, "enc" + std::to_string(i + 1), h, i < 4 ? 2 : 1, 1));
        stages[static_cast<std::size_t>(i)] = h;
    }
    return stages;
}

template <class T>
BasicVar<T> PurifierModel::forward(const BasicParamGraph<T>& params, SkipMode skip, const BasicVar<T>& images) {
    const auto e = encode(params, images);
    auto h = nn::leaky(nn::conv_transpose(params, "dec5", e[4], 1, 1));
    h = nn::leaky(nn::conv_transpose(params, "dec4", join(skip, h, e[3]), 2, 1));
    h = nn::leaky(nn::conv_transpose(params, "dec3", join(skip, h, e[2]), 2, 1));
    h = nn::leaky(nn::conv_transpose(params, "dec2", join(skip, h, e[1]), 2, 1));
    return ops::sigmoid(nn::conv_transpose(params, "dec1", join(skip, h, e[0]), 2, 1));
}

template std::array<BasicVar<float>, 5> PurifierModel::encode(const BasicParamGraph<float>&, const BasicVar<float>&);
template std::array<BasicVar<double>, 5> PurifierModel::encode(const BasicParamGraph<double>&, const BasicVar<double>&);
template BasicVar<float> PurifierModel::forward(const BasicParamGraph<float>&, SkipMode, const BasicVar<float>&);
template BasicVar<double> PurifierModel::forward(const BasicParamGraph<double>&, SkipMode, const BasicVar<double>&);

Image PurifierModel::purify(const Image& image) const { return purify(std::span<const Image>(&image, 1)).front(); }

std::vector<Image> PurifierModel::purify(std::span<const Image> images) const {
    constexpr std::size_t kChunk = 8;
    constexpr float lo = std::numeric_limits<float>::min();
    const float hi = std::nextafter(1.0f, 0.0f);
    NoGradGuard guard;
    std::vector<Image> out;
    out.reserve(images.size());
    std::size_t i = 0;
    while (i < images.size()) {
        const Image& first = images[i];
        if (first.channels != 3 || first.height <= 0 || first.width <= 0) {
            throw DataError("purify: image " + std::to_string(i) + " is not a non-empty RGB image");
        }
        std::vector<Image> chunk;
        const int ph = round_up(first.height, kMultiple), pw = round_up(first.width, kMultiple);
        while (i < images.size() && chunk.size() < kChunk && images[i].same_shape(first)) {
            chunk.push_back(reflect_pad(images[i], ph, pw));
            ++i;
        }
        const auto restored = forward(params, skip, Var::constant(stack_images(chunk))).value();
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            Image img = crop(Image::from_tensor(restored, static_cast<std::int64_t>(b)), 0, 0, first.height, first.width);
            for (auto& v : img.data) v = std::clamp(v, lo, hi);
            out.push_back(std::move(img));
        }
    }
    return out;
}

PurifierModel PurifierModel::clone() const { return {nn::cast_params<float>(params), skip}; }

Discriminator Discriminator::create(std::uint64_t seed) {
    Rng rng(seed);
    Discriminator d;
    nn::add_conv_transpose(d.params, "up", PurifierModel::kWidths[3], kLatentChannels, 16, 16, rng);
    int cin = 3 + kLatentChannels;
    for (int i = 0; i < 4; ++i) {
        nn::add_conv(d.params, "conv" + std::to_string(i + 1), cin, kDiscWidths[static_cast<std::size_t>(i)], 3, rng);
        cin = kDiscWidths[static_cast<std::size_t>(i)];
    }
    nn::add_dense(d.params, "head", cin, 1, rng);
    return d;
}

template <class T>
BasicVar<T> Discriminator::logits(const BasicParamGraph<T>& params, const BasicVar<T>& images, const BasicVar<T>& latent) {
    const auto cond = nn::leaky(nn::conv_transpose(params, "up", latent, 16, 0));
    if (cond.shape()[2] != images.shape()[2] || cond.shape()[3] != images.shape()[3]) {
        throw ShapeError("discriminator: latent " + shape_str(latent.shape()) + " does not match images " +
                         shape_str(images.shape()));
    }
    auto h = ops::concat_channels(images, cond);
    for (int i = 0; i < 4; ++i) h = nn::leaky(nn::conv(params, "conv" + std::to_string(i + 1), h, 2, 1));
    return nn::dense(params, "head", ops::global_avg_pool(h));
}

template BasicVar<float> Discriminator::logits(const BasicParamGraph<float>&, const BasicVar<float>&, const BasicVar<float>&);
template BasicVar<double> Discriminator::logits(const BasicParamGraph<double>&, const BasicVar<double>&,
                                                const BasicVar<double>&);

Discriminator Discriminator::clone() const { return {nn::cast_params<float>(params)}; }

void PurifierTrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("purifier: batch_size must be at least 1");
    if (crop < PurifierModel::kMultiple || crop % PurifierModel::kMultiple != 0) {
        throw ConfigError("purifier: crop must be a positive multiple of 16");
    }
    for (double lr : {warmup_lr, disc_lr, adv_lr}) {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("purifier: learning rates must be positive");
    }
    if (warmup_epochs < 0 || disc_epochs < 0 || adv_epochs < 0) throw ConfigError("purifier: epochs must be non-negative");
    for (double a : {alpha_mse, alpha_proxy, alpha_adv}) {
        if (!(a >= 0.0) || !std::isfinite(a)) throw ConfigError("purifier: loss weights must be non-negative");
    }
}

namespace {

WarmupResult mse_training(const PurifierModel& start, const std::vector<ImagePair>& pairs,
                          const PurifierTrainConfig& config, double learning_rate, int epochs, std::uint64_t stream) {
    config.validate();
    if (!(learning_rate > 0.0) || epochs < 0) throw ConfigError("purifier: invalid learning rate or epoch count");
    check_pairs(pairs, config.crop);
    WarmupResult result{start.clone(), {}};
    auto& params = result.model.params;
    AdamState adam;
    adam.config.lr = learning_rate;
    Batcher batcher(pairs, config, Rng(config.seed).split(stream));
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        batcher.start_epoch();
        double total = 0.0;
        std::int64_t seen = 0;
        for (std::size_t step = 0; step < batcher.steps(); ++step) {
            const auto batch = batcher.batch(step);
            params.zero_grad();
            const auto loss = ops::mse(PurifierModel::forward(params, result.model.skip, Var::constant(batch.poisoned)),
                                       Var::constant(batch.clean));
            require_finite(scalar(loss), "warmup", epoch);
            loss.backward();
            adam_step(params, adam);
            total += scalar(loss) * static_cast<double>(batch.size);
            seen += batch.size;
        }
        result.mse_curve.push_back(total / static_cast<double>(seen));
    }
    return result;
}

} // namespace

WarmupResult continue_warmup(const PurifierModel& start, const std::vector<ImagePair>& pairs,
                             const PurifierTrainConfig& config, double learning_rate, int epochs) {
    return mse_training(start, pairs, config, learning_rate, epochs, kAdversarialStream);
}

WarmupResult train_warmup(const std::vector<ImagePair>& pairs, const PurifierTrainConfig& config) {
    config.validate();
    const auto start = PurifierModel::create(config.skip, Rng(config.seed).split(0).next_u64());
    return mse_training(start, pairs, config, config.warmup_lr, config.warmup_epochs, kWarmupStream);
}

PretrainResult pretrain_discriminator(const PurifierModel& purifier, const std::vector<ImagePair>& pairs,
                                      const PurifierTrainConfig& config) {
    config.validate();
    check_pairs(pairs, config.crop);
    Rng rng = Rng(config.seed).split(kPretrainStream);
    PretrainResult result{Discriminator::create(rng.next_u64()), {}, 0.0};
    auto& params = result.discriminator.params;
    AdamState adam;
    adam.config.lr = config.disc_lr;
    Batcher batcher(pairs, config, rng.split(1));

    auto fake_of = [&](const Tensor& poisoned) {
        NoGradGuard guard;
        return purifier.forward(purifier.params, purifier.skip, Var::constant(poisoned)).value();
    };

    for (int epoch = 1; epoch <= config.disc_epochs; ++epoch) {
        batcher.start_epoch();
        double total = 0.0;
        for (std::size_t step = 0; step < batcher.steps(); ++step) {
            const auto batch = batcher.batch(step);
            const auto fake = fake_of(batch.poisoned);
            params.zero_grad();
            const auto real = Discriminator::logits(params, Var::constant(batch.clean),
                                                    stage4_latent(purifier.params, batch.clean));
            const auto fake_logits =
                Discriminator::logits(params, Var::constant(fake), stage4_latent(purifier.params, fake));
            const auto loss = ops::add(ops::bce_with_logits(real, constant_labels(batch.size, 1.0f)),
                                       ops::bce_with_logits(fake_logits, constant_labels(batch.size, 0.0f)));
            require_finite(scalar(loss), "discriminator", epoch);
            loss.backward();
            adam_step(params, adam);
            total += scalar(loss);
        }
        result.loss_curve.push_back(total / static_cast<double>(batcher.steps()));
    }

    NoGradGuard guard;
    std::size_t correct = 0;
    batcher.start_epoch();
    for (std::size_t step = 0; step < batcher.steps(); ++step) {
        const auto batch = batcher.batch(step);
        const auto fake = fake_of(batch.poisoned);
        const auto real_l = Discriminator::logits(params, Var::constant(batch.clean), stage4_latent(purifier.params, batch.clean));
        const auto fake_l = Discriminator::logits(params, Var::constant(fake), stage4_latent(purifier.params, fake));
        for (std::int64_t k = 0; k < batch.size; ++k) {
            correct += real_l.value()[k] > 0.0f;
            correct += fake_l.value()[k] <= 0.0f;
        }
    }
    result.accuracy = static_cast<double>(correct) / static_cast<double>(2 * pairs.size());
    return result;
}

template <class T>
BasicVar<T> perceptual_proxy_var(const BasicParamGraph<T>& detector_params, const BasicVar<T>& a, const BasicVar<T>& b) {
    if (detector_params.size() == 0) throw ConfigError("perceptual proxy needs a trained detector");
    const auto fa = detect::DetectorModel::forward(detector_params, a);
    const auto fb = detect::DetectorModel::forward(detector_params, b);
    auto layer = [](const BasicVar<T>& x, const BasicVar<T>& y) {
        const auto channels = static_cast<T>(x.shape()[1]);
        return ops::scale(ops::mse(ops::channel_normalize(x), ops::channel_normalize(y)), channels);
    };
    return ops::add(layer(fa.layer2, fb.layer2), layer(fa.layer3, fb.layer3));
}

template BasicVar<float> perceptual_proxy_var(const BasicParamGraph<float>&, const BasicVar<float>&, const BasicVar<float>&);
template BasicVar<double> perceptual_proxy_var(const BasicParamGraph<double>&, const BasicVar<double>&,
                                               const BasicVar<double>&);

double perceptual_proxy(const detect::DetectorModel& detector, const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("perceptual proxy: images differ in shape");
    NoGradGuard guard;
    return scalar(perceptual_proxy_var(detector.params, Var::constant(a.to_tensor()), Var::constant(b.to_tensor())));
}

AdversarialResult train_adversarial(const PurifierModel& warmup, const Discriminator& discriminator,
                                    const std::vector<ImagePair>& pairs, const detect::DetectorModel& detector,
                                    const PurifierTrainConfig& config) {
    config.validate();
    check_pairs(pairs, config.crop);
    if (config.alpha_proxy > 0.0 && detector.params.size() == 0) {
        throw ConfigError("perceptual proxy needs a trained detector");
    }
    AdversarialResult result{warmup.clone(), discriminator.clone(), {}};
    auto& g = result.model.params;
    auto& d = result.discriminator.params;
    auto frozen_detector = nn::cast_params<float>(detector.params);
    frozen_detector.set_trainable(false);
    AdamState adam_g, adam_d;
    adam_g.config.lr = config.adv_lr;
    adam_d.config.lr = config.adv_lr;
    Batcher batcher(pairs, config, Rng(config.seed).split(kAdversarialStream));
    const bool use_adv = config.alpha_adv > 0.0;
    int collapsed = 0;

    for (int epoch = 1; epoch <= config.adv_epochs; ++epoch) {
        batcher.start_epoch();
        AdversarialEpoch row;
        row.epoch = epoch;
        std::int64_t seen = 0;
        for (std::size_t step = 0; step < batcher.steps(); ++step) {
            const auto batch = batcher.batch(step);
            const auto n = static_cast<double>(batch.size);
            g.zero_grad();
            const auto restored = PurifierModel::forward(g, result.model.skip, Var::constant(batch.poisoned));
            const auto fake = restored.value();
            const auto fake_latent = stage4_latent(g, fake);

            d.set_trainable(true);
            d.zero_grad();
            const auto real = Discriminator::logits(d, Var::constant(batch.clean), stage4_latent(g, batch.clean));
            const auto fake_logits = Discriminator::logits(d, Var::constant(fake), fake_latent);
            const auto d_loss = ops::add(ops::bce_with_logits(real, constant_labels(batch.size, 1.0f)),
                                         ops::bce_with_logits(fake_logits, constant_labels(batch.size, 0.0f)));
            require_finite(scalar(d_loss), "discriminator", epoch);
            d_loss.backward();
            adam_step(d, adam_d);
            d.set_trainable(false);

            const auto clean = Var::constant(batch.clean);
            const auto mse = ops::mse(restored, clean);
            auto g_loss = ops::scale(mse, static_cast<float>(config.alpha_mse));
            double proxy_value = 0.0, adv_value = 0.0;
            if (config.alpha_proxy > 0.0) {
                const auto proxy = perceptual_proxy_var(frozen_detector, restored, clean);
                proxy_value = scalar(proxy);
                g_loss = ops::add(g_loss, ops::scale(proxy, static_cast<float>(config.alpha_proxy)));
            }
            if (use_adv) {
                const auto adv = ops::bce_with_logits(Discriminator::logits(d, restored, fake_latent),
                                                      constant_labels(batch.size, 1.0f));
                adv_value = scalar(adv);
                g_loss = ops::add(g_loss, ops::scale(adv, static_cast<float>(config.alpha_adv)));
            }
            require_finite(scalar(g_loss), "purifier", epoch);
            g_loss.backward();
            adam_step(g, adam_g);

            row.disc_loss += scalar(d_loss) * n;
            row.gen_loss += scalar(g_loss) * n;
            row.mse += scalar(mse) * n;
            row.proxy += proxy_value * n;
            row.adv += adv_value * n;
            seen += batch.size;
        }
        d.set_trainable(true);
        for (double* v : {&row.disc_loss, &row.gen_loss, &row.mse, &row.proxy, &row.adv}) *v /= static_cast<double>(seen);
        result.curve.push_back(row);
        collapsed = row.disc_loss < kCollapseLoss ? collapsed + 1 : 0;
        if (collapsed >= kCollapseEpochs) {
            throw NumericError("adversarial training: discriminator loss stayed below 1e-4 for 5 epochs (collapse); "
                               "lower alpha_adv or raise alpha_mse/alpha_proxy");
        }
    }
    return result;
}

} // namespace gshield::purify
