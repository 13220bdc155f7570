#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "rng.hpp"

namespace genodiff {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

// Dense row-major tensor with value semantics. 64-bit scalars by default;
// TensorT<float> is the optional 32-bit mode.
template <class S>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), S(0)) {}

    TensorT(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, S v) {
        TensorT t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static TensorT randn(Shape shape, Rng& rng) {
        TensorT t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<S>(rng.normal());
        return t;
    }

    static TensorT rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
        TensorT t(std::move(shape));
        for (auto& x : t.data_) x = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    S& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    S at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
    S& at(int64_t i, int64_t j, int64_t k) {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }
    S at(int64_t i, int64_t j, int64_t k) const {
        return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
    }

    void fill(S v) {
        for (auto& x : data_) x = v;
    }

    TensorT reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        TensorT t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S x : data_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    double max_abs() const {
        double m = 0.0;
        for (S x : data_) m = std::max(m, std::abs(static_cast<double>(x)));
        return m;
    }

private:
    Shape shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<double>;

template <class S>
void check_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace genodiff
