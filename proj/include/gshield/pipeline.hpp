#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gshield/detector.hpp"
#include "gshield/metrics.hpp"
#include "gshield/purifier.hpp"
#include "gshield/splat2d.hpp"

namespace gshield::pipeline {

struct Decision {
    double probability = 0.0;
    bool flagged = false;
    bool purified = false;
};

struct RemedyResult {
    std::vector<Image> images;
    std::vector<Decision> decisions;
};

/// Classifies every image; flagged images are purified, the rest are copied
/// through unchanged. Images with bypass[i] set skip purification even when
/// flagged (for undetected-poison stress tests).
RemedyResult remedy(std::span<const Image> images, const detect::DetectorModel& detector,
                    const purify::PurifierModel& purifier, const detect::CropPolicy& policy,
                    const std::vector<bool>& bypass = {});

enum class Scenario { Clean, Poisoned, Smoothed, Limited, Remedied };

inline constexpr Scenario kAllScenarios[] = {Scenario::Clean, Scenario::Poisoned, Scenario::Smoothed,
                                             Scenario::Limited, Scenario::Remedied};

std::string to_string(Scenario scenario);

struct EvalConfig {
    splat::VictimConfig victim{};
    double smooth_sigma = 1.0;
    /// Views fitted per scene; 0 = all.
    int fit_views = 0;
};

struct DefenseModels {
    const detect::DetectorModel* detector = nullptr;
    const purify::PurifierModel* purifier = nullptr;
    detect::CropPolicy policy{};
};

struct SceneInputs {
    std::string id;
    std::vector<Image> clean;
    std::vector<Image> poisoned;
};

struct SceneEvaluation {
    std::vector<metrics::MetricRow> rows;
    std::vector<Decision> decisions;  ///< remedied scenario only
    /// Victim fit wall-clock seconds per scenario (kept out of the rows so
    /// that rows replay bit-identically).
    std::map<std::string, double> fit_seconds;
};

/// Bytes of optimisable Gaussian state (9 floats per Gaussian).
inline constexpr double kBytesPerGaussian = 9.0 * sizeof(float);

/// Fits the victim on each scenario's version of the views and measures it
/// against the clean views. Columns: gaussians (sum over fitted views),
/// model_bytes, psnr / ssim of the renders against the clean views, proxy
/// (perceptual proxy, when a detector is given), input_psnr (capped at 100)
/// and input_tv of the victim's inputs.
/// "limited" caps each view at its clean-fit count, so it needs "clean".
/// "remedied" needs both models.
SceneEvaluation evaluate_scene(const SceneInputs& scene, const EvalConfig& config, const DefenseModels& models,
                               std::span<const Scenario> scenarios = kAllScenarios);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

} // namespace gshield::pipeline
