#include <doctest/doctest.h>

#include <cmath>

#include "cas/errors.hpp"
#include "cas/linalg.hpp"
#include "cas/rng.hpp"

using namespace cas;

namespace {

// Independent oracle: centered normal equations solved by plain Gaussian
// elimination with partial pivoting (no Eigen solvers involved).
Vec gauss_solve(Mat A, Vec b) {
    const Eigen::Index n = A.rows();
    for (Eigen::Index col = 0; col < n; ++col) {
        Eigen::Index piv = col;
        for (Eigen::Index r = col + 1; r < n; ++r) {
            if (std::abs(A(r, col)) > std::abs(A(piv, col))) piv = r;
        }
        A.row(col).swap(A.row(piv));
        std::swap(b(col), b(piv));
        for (Eigen::Index r = col + 1; r < n; ++r) {
            const double f = A(r, col) / A(col, col);
            A.row(r) -= f * A.row(col);
            b(r) -= f * b(col);
        }
    }
    Vec x(n);
    for (Eigen::Index r = n - 1; r >= 0; --r) {
        double s = b(r);
        for (Eigen::Index c = r + 1; c < n; ++c) s -= A(r, c) * x(c);
        x(r) = s / A(r, r);
    }
    return x;
}

RidgeSolution ridge_oracle(const Mat& X, const Vec& y, double lambda) {
    const Vec x_mean = X.colwise().mean();
    const double y_mean = y.mean();
    const Mat Xc = X.rowwise() - x_mean.transpose();
    const Vec yc = y.array() - y_mean;
    Mat A = Xc.transpose() * Xc;
    A.diagonal().array() += lambda;
    RidgeSolution sol;
    sol.weights = gauss_solve(A, Xc.transpose() * yc);
    sol.intercept = y_mean - sol.weights.dot(x_mean);
    return sol;
}

Mat random_mat(Rng& rng, int n, int d) {
    Mat X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
    return X;
}

Vec random_vec(Rng& rng, int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.normal();
    return v;
}

}  // namespace

TEST_CASE("ridge matches the elimination oracle on seeded instances") {
    Rng rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 10 + static_cast<int>(rng.below(100));
        const int d = 2 + static_cast<int>(rng.below(20));
        const Mat X = random_mat(rng, n, d);
        const Vec y = random_vec(rng, n);
        for (double lambda : {1e-6, 1.0, 1e3}) {
            const RidgeSolution fit = ridge_fit(X, y, lambda);
            const RidgeSolution oracle = ridge_oracle(X, y, lambda);
            CHECK((fit.weights - oracle.weights).lpNorm<Eigen::Infinity>() <= 1e-8);
            CHECK(std::abs(fit.intercept - oracle.intercept) <= 1e-7);
        }
    }
}

TEST_CASE("primal and dual routes agree when n < d") {
    Rng rng(11);
    const Mat X = random_mat(rng, 12, 40);
    const Vec y = random_vec(rng, 12);
    for (double lambda : {1e-3, 1.0, 50.0}) {
        const RidgeSolution dual = ridge_fit(X, y, lambda);
        const RidgeSolution primal = ridge_fit_primal(X, y, lambda);
        CHECK((dual.weights - primal.weights).lpNorm<Eigen::Infinity>() <= 1e-8);
    }
}

TEST_CASE("the intercept is never penalized") {
    Rng rng(13);
    const Mat X = random_mat(rng, 60, 5);
    const Vec y = random_vec(rng, 60);
    const RidgeSolution base = ridge_fit(X, y, 1.0);
    // Shifting every target by a constant moves only the intercept.
    const Vec shifted = y.array() + 1000.0;
    const RidgeSolution moved = ridge_fit(X, shifted, 1.0);
    CHECK((base.weights - moved.weights).lpNorm<Eigen::Infinity>() <= 1e-7);
    CHECK(moved.intercept == doctest::Approx(base.intercept + 1000.0).epsilon(1e-10));
}

TEST_CASE("exact linear data gives r_squared 1 and tiny-lambda recovery") {
    Rng rng(17);
    const Mat X = random_mat(rng, 50, 4);
    Vec w_true(4);
    w_true << 2.0, -1.0, 0.5, 3.0;
    const Vec y = X * w_true + Vec::Constant(50, 0.25);
    const RidgeSolution fit = ridge_fit(X, y, 1e-10);
    CHECK((fit.weights - w_true).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(fit.intercept == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ridge input guards") {
    Rng rng(19);
    const Mat X = random_mat(rng, 10, 3);
    const Vec y = random_vec(rng, 10);
    CHECK_THROWS_AS(ridge_fit(X, random_vec(rng, 9), 1.0), DimensionMismatch);
    CHECK_THROWS_AS(ridge_fit(X.topRows(1), y.head(1), 1.0), DimensionMismatch);
    CHECK_THROWS_AS(ridge_fit(X, y, -1.0), NonFiniteInput);
    Mat bad = X;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(ridge_fit(bad, y, 1.0), NonFiniteInput);
}

TEST_CASE("duplicate columns with lambda 0 are singular; lambda > 0 regularizes") {
    Rng rng(23);
    Mat X = random_mat(rng, 30, 4);
    X.col(3) = X.col(0);  // rank-deficient by construction
    const Vec y = random_vec(rng, 30);
    CHECK_THROWS_AS(ridge_fit(X, y, 0.0), SingularSystem);
    CHECK_NOTHROW(ridge_fit(X, y, 1.0));
}

TEST_CASE("cosine basics and guards") {
    Vec u(3), v(3);
    u << 1.0, 0.0, 0.0;
    v << 0.0, 2.0, 0.0;
    CHECK(cosine(u, u) == doctest::Approx(1.0));
    CHECK(cosine(u, v) == doctest::Approx(0.0));
    CHECK(cosine(u, Vec(-3.0 * u)) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cosine(u, Vec::Zero(3)), ZeroVector);
    CHECK_THROWS_AS(cosine(u, Vec::Zero(4)), DimensionMismatch);
}

TEST_CASE("random-vector cosine magnitude matches the analytic baseline") {
    // E|cos| for independent Gaussian vectors approaches sqrt(2/(pi d)).
    const int d = 512, trials = 400;
    Rng rng(29);
    double sum = 0.0, sumsq = 0.0;
    for (int t = 0; t < trials; ++t) {
        const double c = std::abs(cosine(random_vec(rng, d), random_vec(rng, d)));
        sum += c;
        sumsq += c * c;
    }
    const double mean = sum / trials;
    const double expected = std::sqrt(2.0 / (M_PI * d));
    const double se = std::sqrt((sumsq / trials - mean * mean) / trials);
    CHECK(std::abs(mean - expected) <= 4.0 * se + 1e-4);
}
