#pragma once

#include <span>
#include <vector>

#include "gshield/numerics/tensor.hpp"

namespace gshield {

/// Planar (channel, row, column) float image; values nominally in [0, 1].
struct Image {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Image() = default;
    Image(int height_, int width_, int channels_ = 3, float fill = 0.0f)
        : channels(channels_), height(height_), width(width_),
          data(static_cast<std::size_t>(channels_) * height_ * width_, fill) {}

    float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }

    /// [1, C, H, W] tensor copy.
    Tensor to_tensor() const;
    static Image from_tensor(const Tensor& t, std::int64_t batch_index = 0);

    friend bool operator==(const Image&, const Image&) = default;
};

/// Stacks same-shaped images into [B, C, H, W].
Tensor stack_images(std::span<const Image> images);

/// Crops a window; throws DataError if it does not fit.
Image crop(const Image& img, int top, int left, int height, int width);

/// Half-sample symmetric index folding (... 1 0 | 0 1 ... n-1 | n-1 n-2 ...).
int reflect_index(int i, int n);

/// Pads bottom/right by symmetric reflection to the given size.
Image reflect_pad(const Image& img, int height, int width);

void clamp01(Image& img);

} // namespace gshield
