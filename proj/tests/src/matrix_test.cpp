#include <doctest.h>

#include <cmath>
#include <limits>

#include "moerlab/matrix.hpp"
#include "moerlab/rng.hpp"

using namespace moerlab;

TEST_CASE("matmul against identity") {
    const Matrix eye = Matrix::from_rows({{1, 0}, {0, 1}});
    const Matrix b = Matrix::from_rows({{5, 6}, {7, 8}});
    const Matrix c = matmul(eye, b);
    CHECK(c == b);
}

TEST_CASE("matmul 1x2 times 2x1") {
    const Matrix a = Matrix::from_rows({{1, 2}});
    const Matrix b = Matrix::from_rows({{3}, {4}});
    const Matrix c = matmul(a, b);
    REQUIRE(c.rows() == 1);
    REQUIRE(c.cols() == 1);
    CHECK(c(0, 0) == 11.0);
}

TEST_CASE("matmul matches a naive triple loop exactly") {
    Rng rng(11);
    Matrix a(7, 5), b(5, 3);
    rng.fill_normal(a.flat(), 0.0, 1.0);
    rng.fill_normal(b.flat(), 0.0, 1.0);
    const Matrix c = matmul(a, b);

    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 5; ++k)
                acc += a(i, k) * b(k, j);
            CHECK(c(i, j) == acc);
        }
}

TEST_CASE("matmul is associative to rounding") {
    Rng rng(12);
    Matrix a(4, 6), b(6, 5), c(5, 3);
    rng.fill_normal(a.flat(), 0.0, 1.0);
    rng.fill_normal(b.flat(), 0.0, 1.0);
    rng.fill_normal(c.flat(), 0.0, 1.0);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.rows(); ++i)
        for (std::size_t j = 0; j < left.cols(); ++j)
            CHECK(left(i, j) == doctest::Approx(right(i, j)).epsilon(1e-9));
}

TEST_CASE("matmul rejects mismatched shapes and non-finite output") {
    Matrix a(2, 3), b(2, 3);
    CHECK_THROWS_AS(matmul(a, b), ContractViolation);

    Matrix inf_a = Matrix::from_rows({{std::numeric_limits<double>::infinity()}});
    Matrix one = Matrix::from_rows({{1.0}});
    CHECK_THROWS_AS(matmul(inf_a, one), ContractViolation);
}

TEST_CASE("matvec agrees with matmul column") {
    Rng rng(13);
    Matrix a(6, 4);
    rng.fill_normal(a.flat(), 0.0, 1.0);
    Vector x(4);
    rng.fill_normal(x, 0.0, 1.0);

    Matrix col(4, 1);
    for (std::size_t i = 0; i < 4; ++i)
        col(i, 0) = x[i];
    const Matrix via_matmul = matmul(a, col);
    const Vector via_matvec = matvec(a, x);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(via_matvec[i] == via_matmul(i, 0));
}

TEST_CASE("matvec_transpose equals transpose-then-matvec") {
    Rng rng(14);
    Matrix a(5, 3);
    rng.fill_normal(a.flat(), 0.0, 1.0);
    Vector y(5);
    rng.fill_normal(y, 0.0, 1.0);

    const Vector direct = matvec_transpose(a, y);
    const Vector via_t = matvec(transpose(a), y);
    REQUIRE(direct.size() == 3);
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(direct[j] == doctest::Approx(via_t[j]).epsilon(1e-12));
}

TEST_CASE("transpose is an involution") {
    Rng rng(15);
    Matrix a(3, 7);
    rng.fill_normal(a.flat(), 0.0, 1.0);
    CHECK(transpose(transpose(a)) == a);
}

TEST_CASE("add_outer accumulates u v^T") {
    Matrix acc(2, 2);
    const Vector u{1.0, 2.0};
    const Vector v{3.0, 4.0};
    add_outer(acc, u, v);
    add_outer(acc, u, v);
    CHECK(acc(0, 0) == 6.0);
    CHECK(acc(0, 1) == 8.0);
    CHECK(acc(1, 0) == 12.0);
    CHECK(acc(1, 1) == 16.0);
}

TEST_CASE("norm2 and dot basics") {
    const Vector v{3.0, 4.0};
    CHECK(norm2(v) == 5.0);
    CHECK(dot(v, v) == 25.0);
    Vector y{1.0, 1.0};
    axpy(2.0, v, y);
    CHECK(y[0] == 7.0);
    CHECK(y[1] == 9.0);
    CHECK_THROWS_AS(dot(v, Vector{1.0}), ContractViolation);
}

TEST_CASE("from_rows rejects ragged input") {
    CHECK_THROWS_AS(Matrix::from_rows({{1, 2}, {3}}), ContractViolation);
}

TEST_CASE("all_finite flags nan and inf") {
    Vector v{1.0, 2.0};
    CHECK(all_finite(v));
    v[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(all_finite(v));
    v[1] = std::numeric_limits<double>::infinity();
    CHECK_FALSE(all_finite(v));
}
