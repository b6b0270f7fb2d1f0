#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gshield/image.hpp"
#include "gshield/splat2d.hpp"
#include "gshield/tv.hpp"

namespace gshield::attack {

struct AttackConfig {
    double epsilon = 26.0 / 255.0;
    /// Sign-gradient step; negative means epsilon / 10.
    double step_size = -1.0;
    int iterations = 100;
    /// Weight of the proximity (mutual-information) term; 0 is the plain attack.
    double adaptive_beta = 0.0;
    double sigma_sq = 1.0;
    /// Refit the victim on the current images every proxy_interval steps.
    bool proxy_logging = false;
    int proxy_interval = 25;
    splat::VictimConfig proxy_victim{};
    std::uint64_t seed = 0;

    double effective_step() const { return step_size < 0.0 ? epsilon / 10.0 : step_size; }
    void validate() const;
};

struct ProxyPoint {
    int iteration = 0;
    double rendered_tv = 0.0;
    std::size_t gaussians = 0;
};

struct PoisonResult {
    std::vector<Image> poisoned;
    double tv_before = 0.0;
    double tv_after = 0.0;
    double max_linf_deviation = 0.0;
    /// One entry per iteration, measured after the step.
    std::vector<double> objective_trace;
    std::vector<double> tv_trace;
    std::vector<ProxyPoint> proxy_trace;
};

/// Projected sign-gradient ascent on TV(V) - beta / (2 sigma^2) * ||V - V_clean||^2.
/// After each step the images are projected onto the epsilon ball around the
/// clean images and clamped to [0, 1]; both hold exactly in double precision.
PoisonResult poison(std::span<const Image> clean, const AttackConfig& config);

/// Same loop; with adaptive_beta = 0 it reduces to poison exactly.
PoisonResult poison_adaptive(std::span<const Image> clean, const AttackConfig& config);

/// Objective value for the given images (TV minus the proximity penalty).
double attack_objective(std::span<const Image> poisoned, std::span<const Image> clean, const AttackConfig& config);

/// Largest |a - b| over all samples, computed in double.
double max_abs_deviation(std::span<const Image> a, std::span<const Image> b);

/// Parses "26/255", "0.1", etc.
double parse_fraction(const std::string& text);

} // namespace gshield::attack
