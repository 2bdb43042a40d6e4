#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "plgf/errors.hpp"

namespace plgf {

using Shape = std::vector<Eigen::Index>;

inline Eigen::Index numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
    os << ')';
    return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major tensor. Feature maps are (C, H, W), token matrices (T, D),
/// vectors (D). Storage is a flat Eigen array so element-wise math stays in
/// expression templates.
template <typename Scalar>
class Tensor {
public:
    using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(plgf::numel(shape_))) {}
    Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Array::Constant(plgf::numel(shape_), fill)) {}
    Tensor(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != plgf::numel(shape_))
            throw InputError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                             to_string(shape_));
    }

    const Shape& shape() const { return shape_; }
    Eigen::Index dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    Eigen::Index size() const { return data_.size(); }
    bool empty() const { return data_.size() == 0; }

    Array& array() { return data_; }
    const Array& array() const { return data_; }
    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    Scalar& operator[](Eigen::Index i) { return data_[i]; }
    Scalar operator[](Eigen::Index i) const { return data_[i]; }

    Scalar& at(Eigen::Index c, Eigen::Index h, Eigen::Index w) { return data_[(c * shape_[1] + h) * shape_[2] + w]; }
    Scalar at(Eigen::Index c, Eigen::Index h, Eigen::Index w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    /// View as a (rows, size/rows) row-major matrix. A (C, H, W) map viewed
    /// with rows = C gives one channel per row.
    MatrixMap matrix(Eigen::Index rows) { return MatrixMap(data_.data(), rows, data_.size() / rows); }
    ConstMatrixMap matrix(Eigen::Index rows) const { return ConstMatrixMap(data_.data(), rows, data_.size() / rows); }
    MatrixMap matrix() { return matrix(shape_.front()); }
    ConstMatrixMap matrix() const { return matrix(shape_.front()); }

    Tensor reshaped(Shape shape) const {
        if (plgf::numel(shape) != size())
            throw InputError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
        return Tensor(std::move(shape), data_);
    }

    template <typename Other>
    Tensor<Other> cast() const {
        return Tensor<Other>(shape_, data_.template cast<Other>());
    }

    void set_zero() { data_.setZero(); }

private:
    Shape shape_;
    Array data_;
};

}  // namespace plgf
