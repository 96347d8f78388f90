#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "vitc/aligned.hpp"

namespace vitc {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Value semantics: copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    int rank() const noexcept { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& at(int i, int j) { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<std::size_t>(i) * shape_[1] + j]; }
    double& at(int c, int i, int j) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + i) * shape_[2] + j];
    }
    double at(int c, int i, int j) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + i) * shape_[2] + j];
    }

    /// Same data, new shape; element count must match.
    Tensor reshaped(Shape shape) const;
    void fill(double value);
    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

    bool all_finite() const noexcept;
    bool bit_equal(const Tensor& other) const noexcept;
    double max_abs_diff(const Tensor& other) const;

private:
    Tensor(Shape shape, AlignedBuffer data);

    Shape shape_;
    AlignedBuffer data_;
};

std::size_t element_count(const Shape& shape);

}  // namespace vitc
