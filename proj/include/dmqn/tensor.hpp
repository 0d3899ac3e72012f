#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dmqn/errors.hpp"

namespace dmqn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, std::size_t b) { return a * b; });
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense row-major array. Value type: copies own their storage.
/// Model state is fp32; the fp64 instantiation exists for gradient checking.
template <class T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape) : shape_(std::move(shape)), values_(shape_size(shape_), T{0}) {
        check_shape();
    }

    BasicTensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
        check_shape();
        if (values_.size() != shape_size(shape_)) {
            throw DimensionError("tensor of shape " + shape_str(shape_) + " given " +
                                 std::to_string(values_.size()) + " values");
        }
    }

    static BasicTensor filled(Shape shape, T v) {
        BasicTensor t(std::move(shape));
        std::fill(t.values_.begin(), t.values_.end(), v);
        return t;
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    /// Extent of the last axis.
    std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
    /// Product of every axis except the last.
    std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    std::span<T> values() { return values_; }
    std::span<const T> values() const { return values_; }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }

    T& operator[](std::size_t i) { return values_[i]; }
    T operator[](std::size_t i) const { return values_[i]; }

    T& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    T at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(values_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(values_).subspan(r * cols(), cols());
    }

    BasicTensor reshaped(Shape shape) const {
        if (shape_size(shape) != size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return BasicTensor(std::move(shape), values_);
    }

    std::vector<T>& storage() { return values_; }

    template <class U>
    BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    void check_shape() const {
        for (auto d : shape_) {
            if (d == 0) throw DimensionError("tensor shape " + shape_str(shape_) + " has a zero extent");
        }
    }

    Shape shape_;
    std::vector<T> values_;
};

/// A trainable tensor that outlives individual graphs. Gradients from every
/// graph that reads it are summed into `grad`.
template <class T>
struct BasicParameter {
    std::string name;
    BasicTensor<T> value;
    std::vector<T> grad;

    BasicParameter() = default;
    BasicParameter(std::string n, BasicTensor<T> v)
        : name(std::move(n)), value(std::move(v)), grad(value.size(), T{0}) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

using Tensor = BasicTensor<float>;
using Parameter = BasicParameter<float>;

}  // namespace dmqn
