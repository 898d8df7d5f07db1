#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "vattn/half.hpp"

namespace vattn {

// Dense row-major tensor. Attention code uses rank 4 [batch, heads, rows,
// cols]; the file format accepts any rank.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
        std::size_t n = 1;
        for (std::size_t d : dims_) {
            if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
            if (d != 0 && n > SIZE_MAX / d) throw std::invalid_argument("Tensor: dimension overflow");
            n *= d;
        }
        data_.resize(n);
    }

    static Tensor bhnd(std::size_t b, std::size_t h, std::size_t n, std::size_t d) {
        return Tensor(std::vector<std::size_t>{b, h, n, d});
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    // Rank-4 accessors.
    T& at(std::size_t b, std::size_t h, std::size_t i, std::size_t j) {
        return data_[((b * dims_[1] + h) * dims_[2] + i) * dims_[3] + j];
    }
    const T& at(std::size_t b, std::size_t h, std::size_t i, std::size_t j) const {
        return data_[((b * dims_[1] + h) * dims_[2] + i) * dims_[3] + j];
    }

    // Rank-3 accessor (per-row scalars such as lse).
    T& at(std::size_t b, std::size_t h, std::size_t i) {
        return data_[(b * dims_[1] + h) * dims_[2] + i];
    }
    const T& at(std::size_t b, std::size_t h, std::size_t i) const {
        return data_[(b * dims_[1] + h) * dims_[2] + i];
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

  private:
    std::vector<std::size_t> dims_;
    std::vector<T> data_;
};

inline Tensor<double> widen(const Tensor<Half>& t) {
    Tensor<double> out(t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = f16_to_f32(t.data()[i]);
    return out;
}

inline Tensor<double> widen(const Tensor<float>& t) {
    Tensor<double> out(t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) out.data()[i] = t.data()[i];
    return out;
}

}  // namespace vattn
