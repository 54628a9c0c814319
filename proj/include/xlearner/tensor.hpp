#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace xl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_str(const Shape& s);

// Dense row-major tensor with value semantics.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("Tensor: data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    // Same storage, new shape with equal element count.
    Tensor reshaped(Shape s) const& {
        Tensor out = *this;
        out.reshape_inplace(std::move(s));
        return out;
    }
    Tensor reshaped(Shape s) && {
        reshape_inplace(std::move(s));
        return std::move(*this);
    }
    void reshape_inplace(Shape s) {
        if (shape_numel(s) != data_.size())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        shape_ = std::move(s);
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

// Bitwise equality, distinguishing -0.0 / NaN payloads.
template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace xl
