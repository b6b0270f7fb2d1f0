#pragma once

#include <span>

#include "gshield/image.hpp"

namespace gshield::attack {

/// Isotropic total variation: for every pixel and channel,
/// sqrt(dy^2 + dx^2) of the forward differences, where a difference that
/// would leave the image (last row / last column) counts as zero.
double tv_score(const Image& image);
double tv_score(std::span<const Image> images);

/// Gradient of tv_score. Where a pixel's difference norm is exactly zero
/// the subgradient 0 is used for that term.
Image tv_gradient(const Image& image);

} // namespace gshield::attack
