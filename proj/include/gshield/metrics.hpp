#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gshield/image.hpp"
#include "gshield/numerics/autograd.hpp"
#include "gshield/tv.hpp"

namespace gshield::metrics {

using attack::tv_score;

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE); +inf for identical images.
double psnr(const Image& a, const Image& b);

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

/// Mean SSIM over channels and all window positions fully inside the image.
double ssim(const Image& a, const Image& b, const SsimParams& params = {});

/// (1 - SSIM) / 2.
double dssim(const Image& a, const Image& b, const SsimParams& params = {});

/// Differentiable SSIM of [1, C, H, W] tensors; the gradient flows to `a` only.
template <class T>
BasicVar<T> ssim_var(const BasicVar<T>& a, const BasicVar<T>& b, const SsimParams& params = {});

/// Normalised 1-D Gaussian taps of length 2 * radius + 1.
std::vector<double> gaussian_kernel(double sigma, int radius);

/// Separable Gaussian blur with radius max(1, ceil(3 sigma)) and symmetric reflection.
Image gaussian_smooth(const Image& image, double sigma);

/// One (scene, scenario) measurement row.
struct MetricRow {
    std::string scene;
    std::string scenario;
    std::map<std::string, double> values;
};

struct ScenarioSummary {
    std::string scenario;
    std::size_t count = 0;
    std::map<std::string, double> mean;
    std::map<std::string, double> median;
    /// mean(scenario) / mean(clean) per column.
    std::map<std::string, double> ratio_to_clean;
    /// Median over scenes of the per-scene scenario/clean ratio.
    std::map<std::string, double> median_ratio_to_clean;
};

struct MetricsReport {
    std::vector<MetricRow> rows;
    std::vector<ScenarioSummary> summaries;

    const ScenarioSummary* find(const std::string& scenario) const;
};

/// Per-scenario means, medians and ratios against the "clean" scenario.
/// Throws DataError on empty input or when rows of one scenario have differing columns.
MetricsReport aggregate(std::vector<MetricRow> rows);

double median(std::vector<double> values);

} // namespace gshield::metrics
