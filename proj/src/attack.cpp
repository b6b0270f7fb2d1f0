#include "gshield/attack.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include "gshield/error.hpp"

namespace gshield::attack {

namespace {

// Largest float in [clean - eps, clean + eps] on the requested side, exact in double.
float ball_edge(float clean, double eps, float direction) {
    const double target = static_cast<double>(clean) + direction * eps;
    float edge = static_cast<float>(target);
    while (std::abs(static_cast<double>(edge) - clean) > eps) edge = std::nextafter(edge, clean);
    return edge;
}

void check_inputs(std::span<const Image> clean) {
    if (clean.empty()) throw DataError("poison: no images given");
    for (std::size_t i = 0; i < clean.size(); ++i) {
        for (float v : clean[i].data) {
            if (!(v >= 0.0f && v <= 1.0f)) {
                throw DataError("poison: image " + std::to_string(i) + " has values outside [0, 1]");
            }
        }
    }
}

PoisonResult run(std::span<const Image> clean, const AttackConfig& config) {
    config.validate();
    check_inputs(clean);
    PoisonResult result;
    result.poisoned.assign(clean.begin(), clean.end());
    result.tv_before = tv_score(clean);

    std::vector<std::vector<float>> lo(clean.size()), hi(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        lo[i].resize(clean[i].size());
        hi[i].resize(clean[i].size());
        for (std::size_t k = 0; k < clean[i].size(); ++k) {
            const float c = clean[i].data[k];
            lo[i][k] = std::max(0.0f, ball_edge(c, config.epsilon, -1.0f));
            hi[i][k] = std::min(1.0f, ball_edge(c, config.epsilon, 1.0f));
        }
    }

    const double step = config.effective_step();
    const double pull = config.adaptive_beta / config.sigma_sq;
    Rng rng(config.seed);
    for (int it = 1; it <= config.iterations; ++it) {
        for (std::size_t i = 0; i < clean.size(); ++i) {
            Image& img = result.poisoned[i];
            const Image grad = tv_gradient(img);
            for (std::size_t k = 0; k < img.size(); ++k) {
                double g = grad.data[k];
                if (pull != 0.0) g -= pull * (static_cast<double>(img.data[k]) - clean[i].data[k]);
                const double dir = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
                const double moved = static_cast<double>(img.data[k]) + step * dir;
                img.data[k] = std::clamp(static_cast<float>(moved), lo[i][k], hi[i][k]);
            }
        }
        const double tv = tv_score(std::span<const Image>(result.poisoned));
        result.tv_trace.push_back(tv);
        result.objective_trace.push_back(pull == 0.0 ? tv : attack_objective(result.poisoned, clean, config));
        if (config.proxy_logging && it % config.proxy_interval == 0) {
            ProxyPoint point{it, 0.0, 0};
            for (std::size_t i = 0; i < clean.size(); ++i) {
                auto victim = config.proxy_victim;
                victim.seed = rng.split(i).next_u64();
                const auto fitted = splat::fit(result.poisoned[i], victim);
                point.rendered_tv += tv_score(splat::render(fitted.scene));
                point.gaussians += fitted.report.final_count;
            }
            result.proxy_trace.push_back(point);
        }
    }
    result.tv_after = tv_score(std::span<const Image>(result.poisoned));
    result.max_linf_deviation = max_abs_deviation(result.poisoned, clean);
    return result;
}

} // namespace

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("attack.epsilon must lie in [0, 1]");
    if (iterations < 0) throw ConfigError("attack.iterations must be non-negative");
    if (adaptive_beta < 0.0) throw ConfigError("attack.adaptive_beta must be non-negative");
    if (!(sigma_sq > 0.0)) throw ConfigError("attack.sigma_sq must be positive");
    if (proxy_logging && proxy_interval <= 0) throw ConfigError("attack.proxy_interval must be positive");
    if (!std::isfinite(effective_step())) throw ConfigError("attack.step_size must be finite");
}

PoisonResult poison(std::span<const Image> clean, const AttackConfig& config) { return run(clean, config); }

PoisonResult poison_adaptive(std::span<const Image> clean, const AttackConfig& config) { return run(clean, config); }

double attack_objective(std::span<const Image> poisoned, std::span<const Image> clean, const AttackConfig& config) {
    if (poisoned.size() != clean.size()) throw ShapeError("attack_objective: image counts differ");
    double sq = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        if (!poisoned[i].same_shape(clean[i])) throw ShapeError("attack_objective: image shapes differ");
        for (std::size_t k = 0; k < clean[i].size(); ++k) {
            const double d = static_cast<double>(poisoned[i].data[k]) - clean[i].data[k];
            sq += d * d;
        }
    }
    return tv_score(poisoned) - config.adaptive_beta / (2.0 * config.sigma_sq) * sq;
}

double max_abs_deviation(std::span<const Image> a, std::span<const Image> b) {
    if (a.size() != b.size()) throw ShapeError("max_abs_deviation: image counts differ");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].same_shape(b[i])) throw ShapeError("max_abs_deviation: image shapes differ");
        for (std::size_t k = 0; k < a[i].size(); ++k) {
            worst = std::max(worst, std::abs(static_cast<double>(a[i].data[k]) - b[i].data[k]));
        }
    }
    return worst;
}

double parse_fraction(const std::string& text) {
    auto parse = [&](std::string_view part) {
        double value = 0.0;
        const auto* end = part.data() + part.size();
        const auto [ptr, ec] = std::from_chars(part.data(), end, value);
        if (ec != std::errc() || ptr != end) throw ConfigError("cannot parse number '" + text + "'");
        return value;
    };
    const auto slash = text.find('/');
    if (slash == std::string::npos) return parse(text);
    const double den = parse(std::string_view(text).substr(slash + 1));
    if (den == 0.0) throw ConfigError("zero denominator in '" + text + "'");
    return parse(std::string_view(text).substr(0, slash)) / den;
}

} // namespace gshield::attack
