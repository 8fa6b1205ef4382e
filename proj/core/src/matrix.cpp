#include "moerlab/matrix.hpp"

#include <algorithm>
#include <cmath>

namespace moerlab {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
        require(row.size() == m.cols(), "from_rows: ragged row lengths");
        std::size_t c = 0;
        for (double v : row)
            m(r, c++) = v;
        ++r;
    }
    return m;
}

bool all_finite(std::span<const double> xs) noexcept {
    for (double v : xs)
        if (!std::isfinite(v))
            return false;
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j)
                out(i, j) += aik * b(k, j);
        }
    }
    require(all_finite(out.flat()), "matmul: non-finite output");
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            out(j, i) = a(i, j);
    return out;
}

void matvec_into(const Matrix& a, std::span<const double> x, std::span<double> out) {
    require(a.cols() == x.size() && a.rows() == out.size(), "matvec: shape mismatch");
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto row = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < row.size(); ++j)
            acc += row[j] * x[j];
        out[i] = acc;
    }
}

Vector matvec(const Matrix& a, std::span<const double> x) {
    Vector out(a.rows());
    matvec_into(a, x, out);
    return out;
}

void matvec_transpose_into(const Matrix& a, std::span<const double> y, std::span<double> out) {
    require(a.rows() == y.size() && a.cols() == out.size(), "matvec_transpose: shape mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double yi = y[i];
        if (yi == 0.0)
            continue;
        const auto row = a.row(i);
        for (std::size_t j = 0; j < row.size(); ++j)
            out[j] += yi * row[j];
    }
}

Vector matvec_transpose(const Matrix& a, std::span<const double> y) {
    Vector out(a.cols());
    matvec_transpose_into(a, y, out);
    return out;
}

void add_outer(Matrix& acc, std::span<const double> u, std::span<const double> v) {
    require(acc.rows() == u.size() && acc.cols() == v.size(), "add_outer: shape mismatch");
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double ui = u[i];
        if (ui == 0.0)
            continue;
        auto row = acc.row(i);
        for (std::size_t j = 0; j < v.size(); ++j)
            row[j] += ui * v[j];
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += a[i] * b[i];
    return acc;
}

double norm2(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a)
        acc += v * v;
    return std::sqrt(acc);
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] += alpha * x[i];
}

void scale_inplace(std::span<double> xs, double alpha) {
    for (double& v : xs)
        v *= alpha;
}

}  // namespace moerlab
