#include "cas/linalg.hpp"

#include <cmath>

#include "cas/errors.hpp"

namespace cas {

namespace {

void check_inputs(const Mat& X, const Vec& y, double lambda) {
    if (y.size() != X.rows()) {
        throw DimensionMismatch("ridge_fit: y has " + std::to_string(y.size()) +
                                " entries for " + std::to_string(X.rows()) + " rows");
    }
    if (X.rows() < 2) {
        throw DimensionMismatch("ridge_fit: need at least 2 samples");
    }
    if (lambda < 0.0) {
        throw NonFiniteInput("ridge_fit: lambda must be nonnegative");
    }
    if (!X.allFinite() || !y.allFinite() || !std::isfinite(lambda)) {
        throw NonFiniteInput("ridge_fit: NaN or Inf in input");
    }
}

RidgeSolution finish(const Mat& X, const Vec& y, const Vec& x_mean, double y_mean,
                     Vec w, double lambda) {
    if (!w.allFinite()) {
        throw SingularSystem("ridge_fit: solver produced non-finite weights");
    }
    RidgeSolution sol;
    sol.intercept = y_mean - w.dot(x_mean);
    sol.weights = std::move(w);
    sol.lambda = lambda;

    const Vec resid = y - (X * sol.weights).array().matrix() -
                      Vec::Constant(y.size(), sol.intercept);
    const double ss_res = resid.squaredNorm();
    const double ss_tot = (y.array() - y_mean).matrix().squaredNorm();
    sol.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot
                                 : (ss_res <= 1e-24 ? 1.0 : 0.0);
    return sol;
}

// Relative residual check: LDLT does not report near-singularity reliably,
// so verify the solve actually satisfied the system.
void check_solve(const Mat& A, const Vec& sol, const Vec& rhs) {
    const double denom = rhs.norm();
    const double res = (A * sol - rhs).norm();
    if (!sol.allFinite() || (denom > 0.0 && res > 1e-6 * denom)) {
        throw SingularSystem("ridge_fit: normal equations are numerically singular");
    }
}

}  // namespace

RidgeSolution ridge_fit_primal(const Mat& X, const Vec& y, double lambda) {
    check_inputs(X, y, lambda);
    const Eigen::Index n = X.rows(), d = X.cols();
    const Vec x_mean = X.colwise().mean();
    const double y_mean = y.mean();
    const Mat Xc = X.rowwise() - x_mean.transpose();
    const Vec yc = y.array() - y_mean;

    Mat A = Xc.transpose() * Xc;
    A.diagonal().array() += lambda;
    const Vec rhs = Xc.transpose() * yc;
    const Eigen::LDLT<Mat> ldlt(A);
    Vec w = ldlt.solve(rhs);
    if (lambda == 0.0) {
        // Unregularized: a rank-deficient Gram matrix has no unique solution
        // even when the solve itself is consistent.
        const Vec D = ldlt.vectorD().cwiseAbs();
        const double dmax = D.maxCoeff();
        if (dmax <= 0.0 || D.minCoeff() <= 1e-10 * dmax) {
            throw SingularSystem("ridge_fit: rank-deficient system with lambda == 0");
        }
    }
    check_solve(A, w, rhs);
    (void)n;
    return finish(X, y, x_mean, y_mean, std::move(w), lambda);
}

RidgeSolution ridge_fit(const Mat& X, const Vec& y, double lambda) {
    check_inputs(X, y, lambda);
    const Eigen::Index n = X.rows(), d = X.cols();
    if (n >= d || lambda == 0.0) {
        return ridge_fit_primal(X, y, lambda);
    }
    // n < d: solve the n x n dual system (Xc Xc^T + lambda I) a = yc, w = Xc^T a.
    const Vec x_mean = X.colwise().mean();
    const double y_mean = y.mean();
    const Mat Xc = X.rowwise() - x_mean.transpose();
    const Vec yc = y.array() - y_mean;

    Mat G = Xc * Xc.transpose();
    G.diagonal().array() += lambda;
    Vec a = G.ldlt().solve(yc);
    check_solve(G, a, yc);
    Vec w = Xc.transpose() * a;
    return finish(X, y, x_mean, y_mean, std::move(w), lambda);
}

double cosine(const Vec& u, const Vec& v) {
    if (u.size() != v.size()) {
        throw DimensionMismatch("cosine: dimension mismatch");
    }
    const double nu = u.norm(), nv = v.norm();
    if (nu == 0.0 || nv == 0.0) {
        throw ZeroVector("cosine: zero-norm input");
    }
    return u.dot(v) / (nu * nv);
}

}  // namespace cas
