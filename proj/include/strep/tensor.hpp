#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strep/error.hpp"

namespace strep {

using Shape = std::vector<std::size_t>;

// Fixed 64-byte alignment keeps vectorized reduction order independent of heap addresses.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape);

/// Dense row-major array. A rank-0 tensor (empty shape) holds one value.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
    Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        require(numel(shape_) == data_.size(), ErrorKind::Shape,
                "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                    shape_str(shape_));
    }
    Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end())) {}
    Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Buffer<T>(data)) {}

    static Tensor scalar(T v) { return Tensor(Shape{}, Buffer<T>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }

    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    Buffer<T>& storage() noexcept { return data_; }
    const Buffer<T>& storage() const noexcept { return data_; }
    std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T item() const {
        require(data_.size() == 1, ErrorKind::Shape, "item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    void reshape(Shape shape) {
        require(numel(shape) == data_.size(), ErrorKind::Shape,
                "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        shape_ = std::move(shape);
    }
    Tensor reshaped(Shape shape) const {
        Tensor out = *this;
        out.reshape(std::move(shape));
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (auto v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Buffer<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool operator==(const Tensor& o) const = default;

   private:
    Shape shape_;
    Buffer<T> data_;
};

}  // namespace strep
