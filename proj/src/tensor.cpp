#include "extremal/tensor.hpp"

#include <cmath>
#include <sstream>

namespace extremal {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    for (int e : shape_) {
        if (e <= 0) throw InvalidInput("tensor extent must be positive, got shape " + shape_to_string(shape_));
    }
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (int e : shape_) {
        if (e <= 0) throw InvalidInput("tensor extent must be positive, got shape " + shape_to_string(shape_));
    }
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
        throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::scalar(float v) { return Tensor({1}, {v}); }

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(std::vector<int> shape) { return full(std::move(shape), 1.0f); }

Tensor Tensor::full(std::vector<int> shape, float v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

int Tensor::extent(int axis) const {
    if (axis < 0 || axis >= rank()) throw InvalidInput("axis " + std::to_string(axis) + " out of range for " + shape_string());
    return shape_[static_cast<std::size_t>(axis)];
}

float Tensor::scalar_value() const {
    if (numel() != 1) throw InvalidInput("expected scalar tensor, got " + shape_string());
    return data_[0];
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) throw NumericalError("non-finite value in " + context);
}

std::string Tensor::shape_string() const { return shape_to_string(shape_); }

} // namespace extremal
