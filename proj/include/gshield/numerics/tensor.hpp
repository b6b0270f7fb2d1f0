#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gshield/error.hpp"

namespace gshield {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Cache-line aligned allocation, so vectorised reductions see the same
/// head/tail split on every run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

/// Dense row-major array. Images use (batch, channel, height, width).
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

    using Storage = std::vector<T, AlignedAllocator<T>>;

    BasicTensor(Shape shape, std::initializer_list<T> data)
        : BasicTensor(std::move(shape), Storage(data.begin(), data.end())) {}

    BasicTensor(Shape shape, const std::vector<T>& data)
        : BasicTensor(std::move(shape), Storage(data.begin(), data.end())) {}

    BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return shape_.empty() && data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// 4-D accessor for (b, c, y, x).
    T& at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }
    const T& at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x)];
    }

    BasicTensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel()) {
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return BasicTensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <class U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, typename BasicTensor<U>::Storage(data_.begin(), data_.end()));
    }

    bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    Shape shape_;
    Storage data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

} // namespace gshield
