#include "gshield/splat2d.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>

#include "gshield/metrics.hpp"
#include "gshield/numerics/optim.hpp"

namespace gshield::splat {

namespace {

constexpr double kCutoff = 9.0;  // squared Mahalanobis radius (3 sigma)

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

template <class T>
struct Entry {
    int pixel;
    int gaussian;
    T alpha;
    T u, v;            // offset in the Gaussian's rotated frame
    T transmittance;   // before this Gaussian
};

template <class T>
struct RasterCache {
    std::vector<Entry<T>> entries;       // grouped by pixel, depth order within a pixel
    std::vector<std::size_t> offsets;    // CSR offsets, size pixels + 1
    std::vector<T> raw;                  // unclamped colour, [3, H, W]
};

} // namespace

float Gaussian2D::opacity() const { return sigmoidf(opacity_logit); }

float Gaussian2D::max_stddev() const { return std::exp(std::max(log_scale[0], log_scale[1])); }

Tensor SplatScene::packed() const {
    Tensor t({static_cast<std::int64_t>(gaussians.size()), kParamsPerGaussian});
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto& g = gaussians[i];
        float* row = t.ptr() + i * kParamsPerGaussian;
        row[kMuX] = g.mu[0];
        row[kMuY] = g.mu[1];
        row[kLogSx] = g.log_scale[0];
        row[kLogSy] = g.log_scale[1];
        row[kRot] = g.rotation;
        row[kOpacity] = g.opacity_logit;
        row[kRed] = g.color[0];
        row[kGreen] = g.color[1];
        row[kBlue] = g.color[2];
    }
    return t;
}

std::vector<float> SplatScene::depth_keys() const {
    std::vector<float> keys;
    keys.reserve(gaussians.size());
    for (const auto& g : gaussians) keys.push_back(g.depth_key);
    return keys;
}

void SplatScene::unpack(const Tensor& packed) {
    if (packed.rank() != 2 || packed.dim(0) != static_cast<std::int64_t>(gaussians.size()) ||
        packed.dim(1) != kParamsPerGaussian) {
        throw ShapeError("unpack: expected [" + std::to_string(gaussians.size()) + ", 9], got " +
                         shape_str(packed.shape()));
    }
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        auto& g = gaussians[i];
        const float* row = packed.ptr() + i * kParamsPerGaussian;
        g.mu = {row[kMuX], row[kMuY]};
        g.log_scale = {row[kLogSx], row[kLogSy]};
        g.rotation = row[kRot];
        g.opacity_logit = row[kOpacity];
        g.color = {row[kRed], row[kGreen], row[kBlue]};
    }
}

template <class T>
BasicVar<T> render_var(const BasicVar<T>& packed, const std::vector<float>& depth_keys, int width, int height,
                       const std::array<float, 3>& background, std::shared_ptr<std::vector<double>> abs_position_grad) {
    const auto& p = packed.value();
    if (p.rank() != 2 || p.dim(1) != kParamsPerGaussian) {
        throw ShapeError("render: packed parameters must be [N, 9], got " + shape_str(p.shape()));
    }
    const auto n = static_cast<std::size_t>(p.dim(0));
    if (n == 0) throw DataError("render: scene has no Gaussians");
    if (depth_keys.size() != n) throw ShapeError("render: depth key count does not match Gaussian count");
    if (width <= 0 || height <= 0) throw DataError("render: image dimensions must be positive");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return depth_keys[a] < depth_keys[b]; });

    const int pixels = width * height;
    auto cache = std::make_shared<RasterCache<T>>();
    std::vector<Entry<T>> raw_entries;
    for (std::size_t gi : order) {
        const T* row = p.ptr() + gi * kParamsPerGaussian;
        const T sx = std::exp(row[kLogSx]), sy = std::exp(row[kLogSy]);
        const T c = std::cos(row[kRot]), s = std::sin(row[kRot]);
        const T mx = row[kMuX], my = row[kMuY];
        if (!std::isfinite(static_cast<double>(sx)) || !std::isfinite(static_cast<double>(sy)) ||
            !std::isfinite(static_cast<double>(c)) || !std::isfinite(static_cast<double>(mx)) ||
            !std::isfinite(static_cast<double>(my)) || sx <= T(0) || sy <= T(0)) {
            throw NumericError("render: Gaussian " + std::to_string(gi) + " has a non-finite covariance or mean");
        }
        const T opacity = T(1) / (T(1) + std::exp(-row[kOpacity]));
        const T rx = T(3) * std::sqrt(c * c * sx * sx + s * s * sy * sy);
        const T ry = T(3) * std::sqrt(s * s * sx * sx + c * c * sy * sy);
        const int x0 = std::max(0, static_cast<int>(std::ceil(static_cast<double>(mx - rx))));
        const int x1 = std::min(width - 1, static_cast<int>(std::floor(static_cast<double>(mx + rx))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(static_cast<double>(my - ry))));
        const int y1 = std::min(height - 1, static_cast<int>(std::floor(static_cast<double>(my + ry))));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const T dx = T(x) - mx, dy = T(y) - my;
                const T u = c * dx + s * dy, v = -s * dx + c * dy;
                const T q = u * u / (sx * sx) + v * v / (sy * sy);
                if (q > T(kCutoff)) continue;
                raw_entries.push_back({y * width + x, static_cast<int>(gi), opacity * std::exp(T(-0.5) * q), u, v, T(0)});
            }
        }
    }

    // Stable counting sort by pixel keeps depth order within each pixel.
    cache->offsets.assign(static_cast<std::size_t>(pixels) + 1, 0);
    for (const auto& e : raw_entries) ++cache->offsets[static_cast<std::size_t>(e.pixel) + 1];
    for (int i = 0; i < pixels; ++i) cache->offsets[static_cast<std::size_t>(i) + 1] += cache->offsets[static_cast<std::size_t>(i)];
    cache->entries.resize(raw_entries.size());
    {
        std::vector<std::size_t> cursor(cache->offsets.begin(), cache->offsets.end() - 1);
        for (const auto& e : raw_entries) cache->entries[cursor[static_cast<std::size_t>(e.pixel)]++] = e;
    }

    BasicTensor<T> out({1, 3, height, width});
    cache->raw.assign(static_cast<std::size_t>(3 * pixels), T(0));
    for (int px = 0; px < pixels; ++px) {
        T acc[3] = {0, 0, 0};
        T trans = 1;
        for (std::size_t k = cache->offsets[static_cast<std::size_t>(px)]; k < cache->offsets[static_cast<std::size_t>(px) + 1]; ++k) {
            auto& e = cache->entries[k];
            e.transmittance = trans;
            const T* row = p.ptr() + static_cast<std::size_t>(e.gaussian) * kParamsPerGaussian;
            const T w = e.alpha * trans;
            for (int ch = 0; ch < 3; ++ch) acc[ch] += row[kRed + ch] * w;
            trans *= T(1) - e.alpha;
        }
        for (int ch = 0; ch < 3; ++ch) {
            const T value = acc[ch] + trans * static_cast<T>(background[static_cast<std::size_t>(ch)]);
            cache->raw[static_cast<std::size_t>(ch * pixels + px)] = value;
            out[ch * pixels + px] = std::clamp(value, T(0), T(1));
        }
    }

    return make_op<T>(std::move(out), {packed}, [cache, pixels, background, abs_position_grad](Node<T>& self) {
        const auto& pv = self.parents[0]->value;
        auto& g = self.parents[0]->grad_buffer();
        double* abs_grad = nullptr;
        if (abs_position_grad) {
            abs_position_grad->assign(static_cast<std::size_t>(pv.dim(0)) * 2, 0.0);
            abs_grad = abs_position_grad->data();
        }
        for (int px = 0; px < pixels; ++px) {
            T gc[3];
            bool any = false;
            for (int ch = 0; ch < 3; ++ch) {
                const T raw = cache->raw[static_cast<std::size_t>(ch * pixels + px)];
                gc[ch] = (raw >= T(0) && raw <= T(1)) ? self.grad[ch * pixels + px] : T(0);
                any = any || gc[ch] != T(0);
            }
            if (!any) continue;
            T behind[3] = {static_cast<T>(background[0]), static_cast<T>(background[1]), static_cast<T>(background[2])};
            const std::size_t lo = cache->offsets[static_cast<std::size_t>(px)];
            for (std::size_t k = cache->offsets[static_cast<std::size_t>(px) + 1]; k-- > lo;) {
                const auto& e = cache->entries[k];
                const T* row = pv.ptr() + static_cast<std::size_t>(e.gaussian) * kParamsPerGaussian;
                T* grow = g.ptr() + static_cast<std::size_t>(e.gaussian) * kParamsPerGaussian;
                T d_alpha = 0;
                for (int ch = 0; ch < 3; ++ch) {
                    d_alpha += gc[ch] * e.transmittance * (row[kRed + ch] - behind[ch]);
                    grow[kRed + ch] += gc[ch] * e.alpha * e.transmittance;
                    behind[ch] = row[kRed + ch] * e.alpha + (T(1) - e.alpha) * behind[ch];
                }
                // alpha = o * exp(-q / 2)
                const T o = T(1) / (T(1) + std::exp(-row[kOpacity]));
                const T gauss = e.alpha / o;
                grow[kOpacity] += d_alpha * gauss * o * (T(1) - o);
                const T d_q = d_alpha * e.alpha * T(-0.5);
                const T inv_sx2 = std::exp(T(-2) * row[kLogSx]), inv_sy2 = std::exp(T(-2) * row[kLogSy]);
                const T c = std::cos(row[kRot]), s = std::sin(row[kRot]);
                const T dq_du = T(2) * e.u * inv_sx2, dq_dv = T(2) * e.v * inv_sy2;
                const T d_mx = d_q * (dq_du * -c + dq_dv * s);
                const T d_my = d_q * (dq_du * -s + dq_dv * -c);
                grow[kMuX] += d_mx;
                grow[kMuY] += d_my;
                if (abs_grad) {
                    abs_grad[2 * e.gaussian] += std::abs(static_cast<double>(d_mx));
                    abs_grad[2 * e.gaussian + 1] += std::abs(static_cast<double>(d_my));
                }
                grow[kLogSx] += d_q * T(-2) * e.u * e.u * inv_sx2;
                grow[kLogSy] += d_q * T(-2) * e.v * e.v * inv_sy2;
                grow[kRot] += d_q * T(2) * e.u * e.v * (inv_sx2 - inv_sy2);
            }
        }
    });
}

template BasicVar<float> render_var(const BasicVar<float>&, const std::vector<float>&, int, int, const std::array<float, 3>&,
                                   std::shared_ptr<std::vector<double>>);
template BasicVar<double> render_var(const BasicVar<double>&, const std::vector<float>&, int, int, const std::array<float, 3>&,
                                    std::shared_ptr<std::vector<double>>);

Image render(const SplatScene& scene) {
    const auto out = render_var(Var::constant(scene.packed()), scene.depth_keys(), scene.width, scene.height, scene.background);
    return Image::from_tensor(out.value());
}

template <class T>
BasicVar<T> reconstruction_loss_var(const BasicVar<T>& rendered, const BasicVar<T>& target, double lambda) {
    auto l1 = ops::l1(rendered, target);
    if (lambda == 0.0) return l1;
    auto s = metrics::ssim_var(rendered, target);
    // (1 - lambda) * l1 + lambda * (1 - s) / 2
    auto dssim = ops::scale(s, static_cast<T>(-0.5 * lambda));
    auto loss = ops::add(ops::scale(l1, static_cast<T>(1.0 - lambda)), dssim);
    BasicTensor<T> shifted = loss.value();
    shifted[0] += static_cast<T>(0.5 * lambda);
    // Constant offset: reuse the graph node, only the value changes.
    loss.mutable_value() = shifted;
    return loss;
}

template BasicVar<float> reconstruction_loss_var(const BasicVar<float>&, const BasicVar<float>&, double);
template BasicVar<double> reconstruction_loss_var(const BasicVar<double>&, const BasicVar<double>&, double);

double reconstruction_loss(const Image& rendered, const Image& target, double lambda) {
    if (!rendered.same_shape(target)) throw ShapeError("reconstruction_loss: image shapes differ");
    double l1 = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) l1 += std::abs(static_cast<double>(rendered.data[i]) - target.data[i]);
    l1 /= static_cast<double>(rendered.size());
    if (lambda == 0.0) return l1;
    return (1.0 - lambda) * l1 + lambda * metrics::dssim(rendered, target);
}

SplatScene initial_scene(const Image& target, const VictimConfig& config, Rng& rng) {
    if (config.initial_gaussians == 0) throw ConfigError("victim.initial_gaussians must be positive");
    SplatScene scene;
    scene.width = target.width;
    scene.height = target.height;
    const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(config.initial_gaussians))));
    const double step_x = static_cast<double>(target.width) / static_cast<double>(grid);
    const double step_y = static_cast<double>(target.height) / static_cast<double>(grid);
    for (std::size_t i = 0; i < config.initial_gaussians; ++i) {
        const auto gx = i % grid, gy = i / grid;
        Gaussian2D g;
        const double x = (static_cast<double>(gx) + 0.5 + rng.uniform(-0.25, 0.25)) * step_x - 0.5;
        const double y = (static_cast<double>(gy) + 0.5 + rng.uniform(-0.25, 0.25)) * step_y - 0.5;
        g.mu = {static_cast<float>(x), static_cast<float>(y)};
        const float s = static_cast<float>(std::log(std::min(step_x, step_y)));
        g.log_scale = {s, s};
        g.rotation = static_cast<float>(rng.uniform(0.0, 3.141592653589793));
        g.opacity_logit = 0.0f;
        const int px = std::clamp(static_cast<int>(std::lround(x)), 0, target.width - 1);
        const int py = std::clamp(static_cast<int>(std::lround(y)), 0, target.height - 1);
        for (int ch = 0; ch < 3; ++ch) g.color[static_cast<std::size_t>(ch)] = target.at(std::min(ch, target.channels - 1), py, px);
        g.depth_key = static_cast<float>(rng.uniform());
        scene.gaussians.push_back(g);
    }
    return scene;
}

DensifyResult densify_and_prune(const SplatScene& scene, const std::vector<double>& mean_grad_norm,
                                const VictimConfig& config, Rng& rng) {
    if (mean_grad_norm.size() != scene.count()) {
        throw ShapeError("densify_and_prune: " + std::to_string(mean_grad_norm.size()) + " gradient statistics for " +
                         std::to_string(scene.count()) + " Gaussians");
    }
    DensifyResult result;
    result.scene.width = scene.width;
    result.scene.height = scene.height;
    result.scene.background = scene.background;

    std::vector<bool> keep(scene.count());
    std::size_t kept = 0;
    for (std::size_t i = 0; i < scene.count(); ++i) {
        keep[i] = scene.gaussians[i].opacity() >= config.prune_opacity;
        kept += keep[i];
    }
    if (kept == 0) {
        // Keep the most opaque Gaussian so the scene never empties.
        std::size_t best = 0;
        for (std::size_t i = 1; i < scene.count(); ++i)
            if (scene.gaussians[i].opacity_logit > scene.gaussians[best].opacity_logit) best = i;
        keep[best] = true;
        kept = 1;
    }
    result.pruned = scene.count() - kept;

    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < scene.count(); ++i)
        if (keep[i] && mean_grad_norm[i] > config.densify_threshold) candidates.push_back(i);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return mean_grad_norm[a] > mean_grad_norm[b]; });
    if (config.max_gaussians > 0) {
        const std::size_t budget = config.max_gaussians > kept ? config.max_gaussians - kept : 0;
        if (candidates.size() > budget) candidates.resize(budget);
    }
    std::vector<int> action(scene.count(), 0);  // 1 clone, 2 split
    for (std::size_t i : candidates) {
        action[i] = scene.gaussians[i].max_stddev() < config.split_scale_threshold ? 1 : 2;
    }

    std::vector<Gaussian2D> appended;
    std::vector<std::size_t> appended_source;
    for (std::size_t i = 0; i < scene.count(); ++i) {
        if (!keep[i]) continue;
        const Gaussian2D& g = scene.gaussians[i];
        if (action[i] == 2) {
            // Two children drawn from the parent's footprint with shrunken scales.
            const float c = std::cos(g.rotation), s = std::sin(g.rotation);
            const float sx = std::exp(g.log_scale[0]), sy = std::exp(g.log_scale[1]);
            for (int child = 0; child < 2; ++child) {
                Gaussian2D k = g;
                const float a = static_cast<float>(rng.normal()) * sx, b = static_cast<float>(rng.normal()) * sy;
                k.mu = {g.mu[0] + c * a - s * b, g.mu[1] + s * a + c * b};
                const float shrink = static_cast<float>(std::log(config.split_factor));
                k.log_scale = {g.log_scale[0] - shrink, g.log_scale[1] - shrink};
                k.depth_key = child == 0 ? g.depth_key : static_cast<float>(rng.uniform());
                if (child == 0) {
                    result.scene.gaussians.push_back(k);
                    result.source.push_back(i);
                    result.created.push_back(true);
                } else {
                    appended.push_back(k);
                    appended_source.push_back(i);
                }
            }
            ++result.split;
            continue;
        }
        result.scene.gaussians.push_back(g);
        result.source.push_back(i);
        result.created.push_back(false);
        if (action[i] == 1) {
            Gaussian2D k = g;
            k.depth_key = static_cast<float>(rng.uniform());
            appended.push_back(k);
            appended_source.push_back(i);
            ++result.cloned;
        }
    }
    for (std::size_t j = 0; j < appended.size(); ++j) {
        result.scene.gaussians.push_back(appended[j]);
        result.source.push_back(appended_source[j]);
        result.created.push_back(true);
    }
    return result;
}

FitResult fit(const Image& target, const VictimConfig& config) {
    if (config.lambda_dssim < 0.0 || config.lambda_dssim > 1.0) throw ConfigError("victim.lambda_dssim must lie in [0, 1]");
    if (!(config.densify_threshold > 0.0) || config.densify_interval <= 0 || !(config.split_scale_threshold > 0.0) ||
        !(config.prune_opacity > 0.0)) {
        throw ConfigError("victim thresholds must be positive");
    }
    for (float v : target.data) {
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("fit: target values must lie in [0, 1]");
    }
    const auto start = std::chrono::steady_clock::now();
    Rng rng(config.seed);
    FitResult result;
    SplatScene& scene = result.scene;
    scene = initial_scene(target, config, rng);
    if (config.max_gaussians > 0 && scene.count() > config.max_gaussians) {
        scene.gaussians.resize(config.max_gaussians);
    }

    const auto target_var = Var::constant(target.to_tensor());
    const int densify_until = config.densify_until > 0 ? config.densify_until : (3 * config.iterations) / 4;
    const double ndc_x = 0.5 * target.width, ndc_y = 0.5 * target.height;
    const double extent = std::max(ndc_x, ndc_y);
    std::array<double, kParamsPerGaussian> lr{};
    lr.fill(config.learning_rate);
    lr[kMuX] = lr[kMuY] = config.position_lr * extent;

    const AdamConfig adam;
    std::vector<double> m(scene.count() * kParamsPerGaussian, 0.0), v(m.size(), 0.0);
    std::vector<std::int64_t> steps(scene.count(), 0);
    std::vector<double> grad_accum(scene.count(), 0.0);
    std::vector<int> grad_count(scene.count(), 0);

    for (int it = 1; it <= config.iterations; ++it) {
        auto params = Var::parameter(scene.packed());
        auto abs_grad = config.absolute_gradient ? std::make_shared<std::vector<double>>() : nullptr;
        auto rendered = render_var(params, scene.depth_keys(), scene.width, scene.height, scene.background, abs_grad);
        auto loss = reconstruction_loss_var(rendered, target_var, config.lambda_dssim);
        const double loss_value = loss.value()[0];
        if (!std::isfinite(loss_value)) {
            throw NumericError("fit: non-finite loss at iteration " + std::to_string(it));
        }
        loss.backward();

        Tensor values = params.value();
        const Tensor& grad = params.grad();
        for (std::size_t i = 0; i < scene.count(); ++i) {
            const float* gr = grad.ptr() + i * kParamsPerGaussian;
            const double gx = (abs_grad ? (*abs_grad)[2 * i] : gr[kMuX]) * ndc_x;
            const double gy = (abs_grad ? (*abs_grad)[2 * i + 1] : gr[kMuY]) * ndc_y;
            grad_accum[i] += std::sqrt(gx * gx + gy * gy);
            ++grad_count[i];
            const auto t = ++steps[i];
            const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t));
            const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t));
            for (int c = 0; c < kParamsPerGaussian; ++c) {
                const std::size_t k = i * kParamsPerGaussian + static_cast<std::size_t>(c);
                const double g = gr[c];
                m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g;
                v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g * g;
                values[static_cast<std::int64_t>(k)] -= static_cast<float>(
                    lr[static_cast<std::size_t>(c)] * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + adam.eps));
            }
            float* row = values.ptr() + i * kParamsPerGaussian;
            for (int ch = 0; ch < 3; ++ch) row[kRed + ch] = std::clamp(row[kRed + ch], 0.0f, 1.0f);
        }
        scene.unpack(values);

        if (it % config.densify_interval == 0 && it <= densify_until) {
            std::vector<double> mean_grad(scene.count());
            for (std::size_t i = 0; i < scene.count(); ++i) {
                mean_grad[i] = grad_count[i] ? grad_accum[i] / grad_count[i] : 0.0;
            }
            auto dens = densify_and_prune(scene, mean_grad, config, rng);
            std::vector<double> nm(dens.scene.count() * kParamsPerGaussian, 0.0), nv(nm.size(), 0.0);
            std::vector<std::int64_t> nsteps(dens.scene.count(), 0);
            for (std::size_t j = 0; j < dens.scene.count(); ++j) {
                if (dens.created[j]) continue;
                const std::size_t src = dens.source[j];
                std::copy_n(m.begin() + static_cast<std::ptrdiff_t>(src * kParamsPerGaussian), kParamsPerGaussian,
                            nm.begin() + static_cast<std::ptrdiff_t>(j * kParamsPerGaussian));
                std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(src * kParamsPerGaussian), kParamsPerGaussian,
                            nv.begin() + static_cast<std::ptrdiff_t>(j * kParamsPerGaussian));
                nsteps[j] = steps[src];
            }
            scene = std::move(dens.scene);
            m = std::move(nm);
            v = std::move(nv);
            steps = std::move(nsteps);
            grad_accum.assign(scene.count(), 0.0);
            grad_count.assign(scene.count(), 0);
        }
        result.report.loss.push_back(loss_value);
        result.report.gaussian_count.push_back(scene.count());
    }
    result.report.final_count = scene.count();
    result.report.iterations = config.iterations;
    result.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

} // namespace gshield::splat
