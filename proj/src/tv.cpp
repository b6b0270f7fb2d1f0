#include "gshield/tv.hpp"

#include <cmath>
#include <vector>

namespace gshield::attack {

double tv_score(const Image& image) {
    double total = 0.0;
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                const double v = image.at(c, y, x);
                const double dy = y + 1 < image.height ? image.at(c, y + 1, x) - v : 0.0;
                const double dx = x + 1 < image.width ? image.at(c, y, x + 1) - v : 0.0;
                total += std::sqrt(dy * dy + dx * dx);
            }
        }
    }
    return total;
}

double tv_score(std::span<const Image> images) {
    double total = 0.0;
    for (const auto& img : images) total += tv_score(img);
    return total;
}

Image tv_gradient(const Image& image) {
    std::vector<double> acc(image.size(), 0.0);
    auto at = [&](int c, int y, int x) -> double& {
        return acc[(static_cast<std::size_t>(c) * image.height + y) * image.width + x];
    };
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                const double v = image.at(c, y, x);
                const bool has_dy = y + 1 < image.height;
                const bool has_dx = x + 1 < image.width;
                const double dy = has_dy ? image.at(c, y + 1, x) - v : 0.0;
                const double dx = has_dx ? image.at(c, y, x + 1) - v : 0.0;
                const double norm = std::sqrt(dy * dy + dx * dx);
                if (norm == 0.0) continue;
                at(c, y, x) -= (dy + dx) / norm;
                if (has_dy) at(c, y + 1, x) += dy / norm;
                if (has_dx) at(c, y, x + 1) += dx / norm;
            }
        }
    }
    Image grad(image.height, image.width, image.channels);
    for (std::size_t i = 0; i < acc.size(); ++i) grad.data[i] = static_cast<float>(acc[i]);
    return grad;
}

} // namespace gshield::attack
