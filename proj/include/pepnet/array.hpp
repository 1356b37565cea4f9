#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pepnet/errors.hpp"

namespace pepnet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major array. Value semantics; data is always contiguous.
template <typename T>
class Array {
public:
    Array() = default;

    explicit Array(Shape shape) : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), T{}) {
        check_shape();
    }

    Array(Shape shape, T fill) : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {
        check_shape();
    }

    Array(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_shape();
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }

    static Array zeros(Shape shape) { return Array(std::move(shape)); }
    static Array full(Shape shape, T v) { return Array(std::move(shape), v); }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    // Negative axes count from the end.
    int64_t dim(int axis) const {
        int r = rank();
        if (axis < 0) axis += r;
        if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape_));
        return shape_[static_cast<size_t>(axis)];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-D accessors with the last axis as the fastest-varying one.
    T& at2(int64_t row, int64_t col) { return data_[static_cast<size_t>(row * dim(-1) + col)]; }
    const T& at2(int64_t row, int64_t col) const { return data_[static_cast<size_t>(row * dim(-1) + col)]; }

    bool same_shape(const Array& other) const { return shape_ == other.shape_; }

    Array reshaped(Shape new_shape) const {
        if (shape_numel(new_shape) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
        Array out;
        out.shape_ = std::move(new_shape);
        out.data_ = data_;
        return out;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    template <typename U>
    Array<U> cast() const {
        Array<U> out;
        out = Array<U>(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<size_t>(i)]);
        return out;
    }

private:
    void check_shape() const {
        for (int64_t d : shape_)
            if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

}  // namespace pepnet
