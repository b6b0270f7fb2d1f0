#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "gshield/image.hpp"
#include "gshield/numerics/autograd.hpp"
#include "gshield/rng.hpp"

namespace gshield::splat {

/// One anisotropic 2-D Gaussian primitive.
struct Gaussian2D {
    std::array<float, 2> mu{};         ///< pixel coordinates (x, y); pixel centres sit on integers
    std::array<float, 2> log_scale{};  ///< log standard deviations along the rotated axes
    float rotation = 0.0f;             ///< radians
    float opacity_logit = 0.0f;
    std::array<float, 3> color{};      ///< flat RGB in [0, 1]
    float depth_key = 0.0f;            ///< compositing order only; never optimised

    float opacity() const;
    float max_stddev() const;
};

/// Columns of the packed parameter tensor [N, 9].
inline constexpr int kParamsPerGaussian = 9;
enum Column : int { kMuX = 0, kMuY, kLogSx, kLogSy, kRot, kOpacity, kRed, kGreen, kBlue };

struct SplatScene {
    std::vector<Gaussian2D> gaussians;
    int width = 0;
    int height = 0;
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};

    std::size_t count() const { return gaussians.size(); }

    Tensor packed() const;
    std::vector<float> depth_keys() const;
    /// Overwrites the optimisable fields from a packed [N, 9] tensor.
    void unpack(const Tensor& packed);
};

struct VictimConfig {
    double lambda_dssim = 0.2;
    /// Mean positional-gradient norm (NDC units) that triggers densification.
    double densify_threshold = 0.01;
    int densify_interval = 100;
    /// Last iteration at which densification may run; 0 means 3/4 of the run.
    int densify_until = 0;
    /// Largest stddev (pixels) that is cloned rather than split.
    double split_scale_threshold = 1.5;
    double split_factor = 1.6;
    double prune_opacity = 0.005;
    /// Hard cap on the Gaussian count; 0 = unlimited.
    std::size_t max_gaussians = 0;
    std::size_t initial_gaussians = 64;
    int iterations = 600;
    double learning_rate = 0.01;
    /// Position step size in NDC units (scaled by half the image extent).
    double position_lr = 0.002;
    /// Densify on per-pixel absolute positional gradients so that opposing
    /// contributions inside one footprint do not cancel.
    bool absolute_gradient = true;
    std::uint64_t seed = 0;
};

struct FitReport {
    std::vector<double> loss;
    std::vector<std::size_t> gaussian_count;
    std::size_t final_count = 0;
    double seconds = 0.0;
    int iterations = 0;
};

/// Front-to-back alpha compositing over Gaussians sorted by depth_key.
/// Differentiable with respect to the packed parameters; output [1, 3, H, W]
/// clamped to [0, 1]. Throws NumericError naming the first Gaussian whose
/// covariance is not finite.
///
/// When abs_position_grad is given, backward also fills it with the per-Gaussian
/// sums of absolute per-pixel mean gradients, laid out [N, 2].
template <class T>
BasicVar<T> render_var(const BasicVar<T>& packed, const std::vector<float>& depth_keys, int width, int height,
                       const std::array<float, 3>& background,
                       std::shared_ptr<std::vector<double>> abs_position_grad = nullptr);

Image render(const SplatScene& scene);

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2.
template <class T>
BasicVar<T> reconstruction_loss_var(const BasicVar<T>& rendered, const BasicVar<T>& target, double lambda);
double reconstruction_loss(const Image& rendered, const Image& target, double lambda);

struct DensifyResult {
    SplatScene scene;
    /// For each output Gaussian, the index of its source in the input scene.
    std::vector<std::size_t> source;
    /// True for Gaussians created by this sweep (clones and split children).
    std::vector<bool> created;
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
};

/// Clone (small) or split (large) every Gaussian whose mean gradient norm
/// exceeds the threshold, then prune low-opacity Gaussians. Never exceeds
/// max_gaussians when set; the strongest gradients win when budget is short.
DensifyResult densify_and_prune(const SplatScene& scene, const std::vector<double>& mean_grad_norm,
                                const VictimConfig& config, Rng& rng);

/// Jittered-grid initialisation with colours sampled from the target.
SplatScene initial_scene(const Image& target, const VictimConfig& config, Rng& rng);

struct FitResult {
    SplatScene scene;
    FitReport report;
};

/// Fits a scene to the target by Adam on the reconstruction loss with
/// periodic densification. Throws NumericError on a non-finite loss.
FitResult fit(const Image& target, const VictimConfig& config);

} // namespace gshield::splat
