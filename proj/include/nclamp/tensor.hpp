#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nclamp {

/// Row-major matrix of doubles. Entries are checked to be finite when a
/// tensor is built from existing values.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols);  // zero-filled
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Tensor from_rows(const std::vector<std::vector<double>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }

    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const noexcept {
        return {values_.data() + r * cols_, cols_};
    }
    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    // Throws NumericalError if any entry is NaN or infinite.
    void check_finite(const char* what) const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

}  // namespace nclamp
