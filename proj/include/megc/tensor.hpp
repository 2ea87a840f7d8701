#pragma once

// Dense NCHW tensor. The whole numeric stack is templated on the scalar
// type: float for training speed, double where tests need the headroom
// (finite-difference gradient checks).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "megc/core.hpp"

namespace megc {

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    bool operator==(const Shape&) const = default;
    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::string str() const { return concat(n, "x", c, "x", h, "x", w); }
};

template <typename T>
class Tensor {
public:
    Tensor() = default;
    Tensor(int n, int c, int h, int w) : shape_{n, c, h, w}, v_(shape_.count(), T(0)) {}
    explicit Tensor(Shape s) : shape_(s), v_(s.count(), T(0)) {}

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
    static Tensor full(int n, int c, int h, int w, T value) {
        Tensor t(n, c, h, w);
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }

    T& operator[](std::size_t i) { return v_[i]; }
    const T& operator[](std::size_t i) const { return v_[i]; }

    T& at(int i, int j, int y, int x) {
        return v_[((static_cast<std::size_t>(i) * shape_.c + j) * shape_.h + y) * shape_.w + x];
    }
    const T& at(int i, int j, int y, int x) const {
        return v_[((static_cast<std::size_t>(i) * shape_.c + j) * shape_.h + y) * shape_.w + x];
    }

    // Pointer to the start of one (sample, channel) plane.
    T* plane(int i, int j) {
        return v_.data() + (static_cast<std::size_t>(i) * shape_.c + j) * shape_.h * shape_.w;
    }
    const T* plane(int i, int j) const {
        return v_.data() + (static_cast<std::size_t>(i) * shape_.c + j) * shape_.h * shape_.w;
    }

    void fill(T value) { std::fill(v_.begin(), v_.end(), value); }

    void add_(const Tensor& other) {
        require(other.shape_ == shape_, ErrorCategory::shape,
                concat("tensor add: ", shape_.str(), " vs ", other.shape_.str()));
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += other.v_[i];
    }

    T min() const { return v_.empty() ? T(0) : *std::min_element(v_.begin(), v_.end()); }
    T max() const { return v_.empty() ? T(0) : *std::max_element(v_.begin(), v_.end()); }

    double sum() const {
        double s = 0.0;
        for (T x : v_) s += static_cast<double>(x);
        return s;
    }
    double mean() const { return v_.empty() ? 0.0 : sum() / static_cast<double>(v_.size()); }

    double sq_norm() const {
        double s = 0.0;
        for (T x : v_) s += static_cast<double>(x) * static_cast<double>(x);
        return s;
    }

    bool all_finite() const {
        for (T x : v_)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_.n, shape_.c, shape_.h, shape_.w);
        for (std::size_t i = 0; i < v_.size(); ++i) out[i] = static_cast<U>(v_[i]);
        return out;
    }

    // One sample as its own n=1 tensor.
    Tensor slice_sample(int i) const {
        Tensor out(1, shape_.c, shape_.h, shape_.w);
        std::size_t per = shape_.count() / shape_.n;
        std::copy(v_.begin() + static_cast<std::ptrdiff_t>(per) * i,
                  v_.begin() + static_cast<std::ptrdiff_t>(per) * (i + 1), out.v_.begin());
        return out;
    }

    void set_sample(int i, const Tensor& src) {
        require(src.n() == 1 && src.c() == shape_.c && src.h() == shape_.h && src.w() == shape_.w,
                ErrorCategory::shape, "set_sample: shape mismatch");
        std::size_t per = shape_.count() / shape_.n;
        std::copy(src.v_.begin(), src.v_.end(),
                  v_.begin() + static_cast<std::ptrdiff_t>(per) * i);
    }

private:
    Shape shape_{};
    std::vector<T> v_;
};

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev, double mean = 0.0) {
    std::normal_distribution<double> dist(mean, stddev);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
}

}  // namespace megc
