#include "dfl/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "dfl/error.hpp"

namespace dfl {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Io: return "io";
        case ErrorKind::Format: return "format";
        case ErrorKind::Version: return "version";
        case ErrorKind::Config: return "config";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Runtime: return "runtime";
    }
    return "unknown";
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

static void check_extents(const Shape& shape) {
    for (auto d : shape)
        require(d > 0, ErrorKind::Shape, "tensor extents must be positive, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents(shape_);
    require(data_.size() == shape_numel(shape_), ErrorKind::Shape,
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    check_finite("tensor construction");
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    check_extents(shape);
    Tensor t;
    t.data_.assign(shape_numel(shape), value);
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

double Tensor::item() const {
    require(data_.size() == 1, ErrorKind::Shape, "item() on non-scalar tensor " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    check_extents(shape);
    require(shape_numel(shape) == data_.size(), ErrorKind::Shape,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::check_finite(const std::string& context) const {
    if (!all_finite()) fail(ErrorKind::Numeric, "non-finite value in " + context);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
    require(other.shape_ == shape_, ErrorKind::Shape,
            "accumulate shape mismatch " + shape_str(shape_) + " vs " + shape_str(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(double)) == 0;
}

}  // namespace dfl
