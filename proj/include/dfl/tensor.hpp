#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace dfl {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major double tensor. Values are checked finite when built from
// caller data; kernels producing outputs go through zeros()/filled() and
// fill in place.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);

    const Shape& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // [C,H,W] accessors
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    // [R,C] accessors
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const;

    // Same data, new shape with the same element count.
    Tensor reshaped(Shape shape) const;

    bool all_finite() const;
    void check_finite(const std::string& context) const;

    void fill(double v);
    void add_(const Tensor& other);  // in-place accumulate, shapes must match

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

// Byte-level equality, distinguishes -0.0/+0.0 and NaN payloads.
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace dfl
