#include "i2p/tensor.hpp"

#include <cmath>
#include <sstream>

#include "i2p/errors.hpp"

namespace i2p {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

void require_shape(const Shape& got, const Shape& want, const char* what) {
    if (got != want) {
        throw DimensionError(std::string(what) + ": expected shape " + shape_str(want) + ", got " +
                             shape_str(got));
    }
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return Tensor(Shape{rows, cols}, std::vector<T>(values));
}

template <typename T>
std::size_t Tensor<T>::rows() const {
    if (shape_.empty()) return 1;
    return data_.size() / shape_.back();
}

template <typename T>
std::size_t Tensor<T>::cols() const {
    return shape_.empty() ? 1 : shape_.back();
}

template <typename T>
T Tensor<T>::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
    if (shape_numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
}

template <typename T>
void Tensor<T>::fill(T v) {
    for (auto& x : data_) x = v;
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (auto x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace i2p
