#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "s2d/errors.hpp"

namespace s2d {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. This is the value type flowing through
/// the whole project; differentiability is layered on top by Graph.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor from(Shape shape, std::initializer_list<double> vals) {
        return Tensor(std::move(shape), std::vector<double>(vals));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const { return data_.size(); }
    bool defined() const { return !shape_.empty() || !data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double item() const {
        if (numel() != 1) throw ContractError("item() on tensor of " + std::to_string(numel()) + " elements");
        return data_[0];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    void add_(const Tensor& other) {
        if (other.numel() != numel())
            throw ShapeError("add_: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool bit_equal(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::fabs(v));
        return m;
    }

    double max_abs_diff(const Tensor& other) const {
        if (!same_shape(other))
            throw ShapeError("max_abs_diff: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
        double m = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i) m = std::max(m, std::fabs(data_[i] - other.data_[i]));
        return m;
    }

    /// Row-major strides.
    std::vector<std::size_t> strides() const {
        std::vector<std::size_t> st(shape_.size(), 1);
        for (std::size_t i = shape_.size(); i-- > 1;) st[i - 1] = st[i] * shape_[i];
        return st;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Splits a shape into (outer, axis extent, inner) products around `axis`.
struct AxisSplit {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace s2d
