#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace i2p {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. The element count always equals the product of the
// shape; a rank-0 shape ({}) holds one scalar.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<T> data);
    Tensor(Shape shape, T fill);

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Rows/cols view a tensor as a matrix whose last axis is the column axis.
    std::size_t rows() const;
    std::size_t cols() const;

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> span() { return data_; }
    std::span<const T> span() const { return data_; }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    T item() const;
    void reshape(Shape shape);
    void fill(T v);
    bool all_finite() const;

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        out.requires_grad = requires_grad;
        return out;
    }

    bool requires_grad = false;

private:
    Shape shape_;
    std::vector<T> data_;
};

// Throws DimensionError with `what` as context when shapes differ.
void require_shape(const Shape& got, const Shape& want, const char* what);

}  // namespace i2p
