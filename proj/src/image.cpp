#include "gshield/image.hpp"

#include <algorithm>

namespace gshield {

Tensor Image::to_tensor() const {
    return Tensor({1, channels, height, width}, data);
}

Image Image::from_tensor(const Tensor& t, std::int64_t batch_index) {
    if (t.rank() != 4) throw ShapeError("image tensor must have rank 4, got " + shape_str(t.shape()));
    Image img(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)), static_cast<int>(t.dim(1)));
    const auto offset = batch_index * static_cast<std::int64_t>(img.size());
    std::copy_n(t.ptr() + offset, img.size(), img.data.begin());
    return img;
}

Tensor stack_images(std::span<const Image> images) {
    if (images.empty()) throw DataError("stack_images: no images");
    const Image& first = images.front();
    Tensor out({static_cast<std::int64_t>(images.size()), first.channels, first.height, first.width});
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (!images[i].same_shape(first)) throw ShapeError("stack_images: image " + std::to_string(i) + " differs in shape");
        std::copy(images[i].data.begin(), images[i].data.end(), out.ptr() + i * first.size());
    }
    return out;
}

Image crop(const Image& img, int top, int left, int height, int width) {
    if (top < 0 || left < 0 || top + height > img.height || left + width > img.width) {
        throw DataError("crop window " + std::to_string(height) + "x" + std::to_string(width) + " at (" +
                        std::to_string(top) + ", " + std::to_string(left) + ") exceeds image " +
                        std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    Image out(height, width, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
    return out;
}

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

Image reflect_pad(const Image& img, int height, int width) {
    Image out(height, width, img.channels);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(c, y, x) = img.at(c, reflect_index(y, img.height), reflect_index(x, img.width));
    return out;
}

void clamp01(Image& img) {
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

} // namespace gshield
