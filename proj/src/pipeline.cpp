#include "gshield/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "gshield/error.hpp"

namespace gshield::pipeline {

RemedyResult remedy(std::span<const Image> images, const detect::DetectorModel& detector,
                    const purify::PurifierModel& purifier, const detect::CropPolicy& policy,
                    const std::vector<bool>& bypass) {
    if (!bypass.empty() && bypass.size() != images.size()) throw DataError("remedy: bypass mask length differs from image count");
    RemedyResult result;
    result.images.assign(images.begin(), images.end());
    Rng rng(policy.seed);
    std::vector<Image> to_purify;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto p = policy;
        p.size = std::min({policy.size, images[i].height, images[i].width});
        p.seed = rng.split(i).next_u64();
        const auto d = detect::detect(detector, images[i], p);
        Decision decision{d.probability, d.label == 1, false};
        if (decision.flagged && (bypass.empty() || !bypass[i])) {
            decision.purified = true;
            to_purify.push_back(images[i]);
            where.push_back(i);
        }
        result.decisions.push_back(decision);
    }
    auto restored = purifier.purify(to_purify);
    for (std::size_t k = 0; k < where.size(); ++k) result.images[where[k]] = std::move(restored[k]);
    return result;
}

std::string to_string(Scenario scenario) {
    switch (scenario) {
        case Scenario::Clean: return "clean";
        case Scenario::Poisoned: return "poisoned";
        case Scenario::Smoothed: return "smoothed";
        case Scenario::Limited: return "limited";
        case Scenario::Remedied: return "remedied";
    }
    return "clean";
}

SceneEvaluation evaluate_scene(const SceneInputs& scene, const EvalConfig& config, const DefenseModels& models,
                               std::span<const Scenario> scenarios) {
    if (scene.clean.empty() || scene.clean.size() != scene.poisoned.size()) {
        throw DataError("evaluate: scene " + scene.id + " needs matching clean and poisoned views");
    }
    const std::size_t views = config.fit_views > 0 ? std::min<std::size_t>(static_cast<std::size_t>(config.fit_views), scene.clean.size())
                                                   : scene.clean.size();
    const auto has = [&](Scenario s) { return std::find(scenarios.begin(), scenarios.end(), s) != scenarios.end(); };
    if (has(Scenario::Limited) && !has(Scenario::Clean)) throw ConfigError("evaluate: the limited scenario needs clean");
    if (has(Scenario::Remedied) && (models.detector == nullptr || models.purifier == nullptr)) {
        throw ConfigError("evaluate: the remedied scenario needs a detector and a purifier");
    }

    SceneEvaluation out;
    std::vector<std::size_t> clean_counts(views, 0);
    const std::vector<Image> clean(scene.clean.begin(), scene.clean.begin() + static_cast<std::ptrdiff_t>(views));
    const std::vector<Image> poisoned(scene.poisoned.begin(), scene.poisoned.begin() + static_cast<std::ptrdiff_t>(views));

    for (const Scenario scenario : kAllScenarios) {
        if (!has(scenario)) continue;
        std::vector<Image> inputs;
        switch (scenario) {
            case Scenario::Clean: inputs = clean; break;
            case Scenario::Poisoned:
            case Scenario::Limited: inputs = poisoned; break;
            case Scenario::Smoothed:
                for (const auto& img : poisoned) inputs.push_back(metrics::gaussian_smooth(img, config.smooth_sigma));
                break;
            case Scenario::Remedied: {
                auto r = remedy(poisoned, *models.detector, *models.purifier, models.policy);
                inputs = std::move(r.images);
                out.decisions = std::move(r.decisions);
                break;
            }
        }
        metrics::MetricRow row{scene.id, to_string(scenario), {}};
        double gaussians = 0.0, psnr = 0.0, ssim = 0.0, proxy = 0.0, input_psnr = 0.0, input_tv = 0.0, seconds = 0.0;
        for (std::size_t v = 0; v < views; ++v) {
            auto victim = config.victim;
            victim.seed = Rng(config.victim.seed).split(v).next_u64();
            if (scenario == Scenario::Limited) victim.max_gaussians = clean_counts[v];
            const auto fit = splat::fit(inputs[v], victim);
            if (scenario == Scenario::Clean) clean_counts[v] = fit.report.final_count;
            const Image render = splat::render(fit.scene);
            gaussians += static_cast<double>(fit.report.final_count);
            psnr += metrics::psnr(render, clean[v]);
            ssim += metrics::ssim(render, clean[v]);
            if (models.detector != nullptr) proxy += purify::perceptual_proxy(*models.detector, render, clean[v]);
            input_psnr += std::min(metrics::psnr(inputs[v], clean[v]), 100.0);
            input_tv += metrics::tv_score(inputs[v]);
            seconds += fit.report.seconds;
        }
        const double n = static_cast<double>(views);
        row.values = {{"gaussians", gaussians},        {"model_bytes", gaussians * kBytesPerGaussian},
                      {"psnr", psnr / n},              {"ssim", ssim / n},
                      {"input_psnr", input_psnr / n},  {"input_tv", input_tv / n}};
        out.fit_seconds[row.scenario] = seconds;
        if (models.detector != nullptr) row.values["proxy"] = proxy / n;
        out.rows.push_back(std::move(row));
    }
    return out;
}

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    const auto workers = static_cast<std::size_t>(std::max(1, jobs));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace gshield::pipeline
