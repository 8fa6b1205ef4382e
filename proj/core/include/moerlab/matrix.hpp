#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace moerlab {

// Thrown when a caller breaks a documented precondition (shape mismatch,
// out-of-range argument, non-finite input, missing cache).
class ContractViolation final : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline void require(bool condition, const std::string& what) {
    if (!condition)
        throw ContractViolation(what);
}

using Vector = std::vector<double>;

/// Dense row-major matrix of 64-bit floats. All reductions in this library
/// run left-to-right in index order, so results are deterministic.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vector data_;
};

bool all_finite(std::span<const double> xs) noexcept;

/// a (m×k) times b (k×n). Throws on dimension mismatch or non-finite output.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// out = A x. No allocation, no finiteness scan; this is the hot path.
void matvec_into(const Matrix& a, std::span<const double> x, std::span<double> out);
Vector matvec(const Matrix& a, std::span<const double> x);

// out = A^T y.
void matvec_transpose_into(const Matrix& a, std::span<const double> y, std::span<double> out);
Vector matvec_transpose(const Matrix& a, std::span<const double> y);

// acc += u v^T, where acc is |u| × |v|.
void add_outer(Matrix& acc, std::span<const double> u, std::span<const double> v);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale_inplace(std::span<double> xs, double alpha);

}  // namespace moerlab
