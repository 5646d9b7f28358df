#include "nclamp/tensor.hpp"

#include <cmath>
#include <string>

#include "nclamp/errors.hpp"

namespace nclamp {

Tensor::Tensor(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw DimensionError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                             std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    check_finite("tensor");
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    std::vector<double> flat;
    flat.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("tensor: ragged rows");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return Tensor(rows.size(), cols, std::move(flat));
}

void Tensor::check_finite(const char* what) const {
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw NumericalError(std::string(what) + ": non-finite entry at flat index " + std::to_string(i));
        }
    }
}

}  // namespace nclamp
