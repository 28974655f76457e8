#ifndef CHAI_TENSOR_HPP
#define CHAI_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace chai {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

/**
 * Dense row-major array of real scalars.
 *
 * The scalar type is a template parameter so verification code can run in
 * double precision while training runs in float. Tensors are plain values:
 * copies are deep and every operation in the library leaves its inputs alone.
 */
template<typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
        check_extents();
        data_.assign(shape_volume(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        check_extents();
        if (shape_volume(shape_) != data_.size()) {
            throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                               " does not match shape " + shape_string(shape_));
        }
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    T& operator()(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    const T& operator()(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    /// Elementwise `*this += scale * other`.
    void add_scaled(const Tensor& other, T scale = T{1}) {
        if (other.shape_ != shape_) {
            throw InvalidInput("add_scaled shape mismatch " + shape_string(shape_) + " vs " +
                               shape_string(other.shape_));
        }
        for (std::size_t i = 0; i < data_.size(); ++i) {
            data_[i] += scale * other.data_[i];
        }
    }

    template<typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void check_extents() const {
        for (auto e : shape_) {
            if (e == 0) {
                throw InvalidInput("tensor extents must be positive, got " + shape_string(shape_));
            }
        }
    }

    Shape shape_;
    std::vector<T> data_;
};

template<typename T>
void require_finite(const Tensor<T>& t, const char* what) {
    if (!t.all_finite()) {
        throw NumericDomainError(std::string(what) + " contains non-finite values");
    }
}

template<typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw InvalidInput(std::string(what) + " must have rank " + std::to_string(rank) +
                           ", got shape " + shape_string(t.shape()));
    }
}

template<typename T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) {
        throw InvalidInput("squared_distance dimension mismatch: " + std::to_string(a.size()) +
                           " vs " + std::to_string(b.size()));
    }
    T sum{0};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const T d = a[i] - b[i];
        sum += d * d;
    }
    return sum;
}

template<typename T>
T squared_distance(const Tensor<T>& a, const Tensor<T>& b) {
    return squared_distance<T>(a.data(), b.data());
}

}

#endif
