#ifndef EXTREMAL_TENSOR_HPP
#define EXTREMAL_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "extremal/errors.hpp"

namespace extremal {

// Dense row-major float tensor. The universal value type for images, masks,
// activations and gradients. Public operations keep every element finite.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<float> data);

    static Tensor scalar(float v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor ones(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, float v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    int extent(int axis) const;

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }
    float* ptr() { return data_.data(); }
    const float* ptr() const { return data_.data(); }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Row-major index helpers for the common ranks.
    float& at(int i) { return data_[static_cast<std::size_t>(i)]; }
    float at(int i) const { return data_[static_cast<std::size_t>(i)]; }
    float& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    float at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    float& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    float at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool is_scalar() const { return numel() == 1; }
    float scalar_value() const;

    bool all_finite() const;
    // Throws NumericalError when a non-finite element is present.
    void require_finite(const std::string& context) const;

    std::string shape_string() const;

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

} // namespace extremal

#endif
