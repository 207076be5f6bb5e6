#pragma once

#include <Eigen/Dense>

namespace cas {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Closed-form ridge regression result. The intercept is never penalized;
// `weights` is fitted on centered features/targets and `intercept`
// recovers b = mean(y) - w . mean(x).
struct RidgeSolution {
    Vec weights;
    double intercept = 0.0;
    double lambda = 0.0;
    double r_squared = 0.0;
};

// Solves min_w,b sum_s (y_s - w.x_s - b)^2 + lambda ||w||^2.
// Picks the primal (d x d) or dual (n x n) normal-equation form by size;
// the two are algebraically identical for lambda > 0.
RidgeSolution ridge_fit(const Mat& X, const Vec& y, double lambda);

// Same objective solved strictly through the primal d x d system,
// regardless of n vs d. Exposed so the two routes can be cross-checked.
RidgeSolution ridge_fit_primal(const Mat& X, const Vec& y, double lambda);

double cosine(const Vec& u, const Vec& v);

}  // namespace cas
