#include "fstta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "fstta/errors.hpp"

namespace fstta {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
    }
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
}

double Tensor::item() const {
    if (data_.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || begin > end || end > shape_[0]) {
        throw ShapeError("row slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                         shape_str(shape_));
    }
    const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape out_shape = shape_;
    out_shape[0] = end - begin;
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                            data_.begin() + static_cast<std::ptrdiff_t>(end * row));
    return Tensor(std::move(out_shape), std::move(out));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> rows) const {
    if (shape_.empty()) throw ShapeError("gather_rows on a scalar");
    const std::size_t row = shape_[0] ? data_.size() / shape_[0] : 0;
    Shape out_shape = shape_;
    out_shape[0] = rows.size();
    Tensor out(out_shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= shape_[0]) {
            throw ShapeError("row index " + std::to_string(rows[i]) + " out of range for " + shape_str(shape_));
        }
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * row), row,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) return Tensor();
    Shape shape = parts.front().shape();
    if (shape.empty()) throw ShapeError("concat_rows on scalars");
    std::size_t rows = 0;
    for (const auto& p : parts) {
        if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
            throw ShapeError("concat_rows: " + shape_str(p.shape()) + " vs " + shape_str(shape));
        }
        rows += p.dim(0);
    }
    shape[0] = rows;
    std::vector<double> data;
    data.reserve(shape_numel(shape));
    for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace fstta
