#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace lexee {

using Objective = std::function<double(const Eigen::VectorXd&)>;
using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Central-difference gradient with per-coordinate step h_k = scale * max(1, |x_k|).
[[nodiscard]] Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x,
                                          double scale = 1e-6);

// Central-difference Jacobian of a vector function, columns indexed by input
// coordinate; same step rule as fd_gradient.
[[nodiscard]] Eigen::MatrixXd fd_jacobian(const VectorFn& f, const Eigen::VectorXd& x,
                                          double scale = 1e-6);

// Symmetric four-point second differences; step scale chosen for curvature.
[[nodiscard]] Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x,
                                         double scale = 1e-4);

struct MinimizeOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;      // on the max-norm of the gradient
    double objective_tolerance = 1e-10;    // relative change across an accepted step
    double fd_scale = 1e-6;
    // Reports each accepted iterate: (x, f(x)).
    std::function<void(const Eigen::VectorXd&, double)> on_accept;
};

struct MinimizeResult {
    Eigen::VectorXd x;
    double value = 0.0;
    Eigen::VectorXd gradient;
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;  // objective value after each accepted step
};

// Dense BFGS with Armijo backtracking. The objective may signal an
// infeasible point by returning +infinity (or NaN); such trial points are
// rejected by the line search. The gradient defaults to central finite
// differences of `f`.
[[nodiscard]] MinimizeResult minimize_bfgs(const Objective& f, const Eigen::VectorXd& x0,
                                           const MinimizeOptions& opts = {},
                                           const VectorFn& gradient = nullptr);

struct NewtonOptions {
    int max_iterations = 100;
    double residual_tolerance = 1e-8;  // on the max-norm of g
    int max_halvings = 50;
    double fd_scale = 1e-6;
    // Optional admissibility test for trial points; halving retreats toward
    // the previous iterate until it passes.
    std::function<bool(const Eigen::VectorXd&)> admissible;
};

struct NewtonResult {
    Eigen::VectorXd x;
    Eigen::VectorXd residual;
    int iterations = 0;
    bool converged = false;
};

// Damped Newton for square root-finding problems g(x) = 0 with numeric
// Jacobian. Steps are halved while the residual norm grows or the trial
// point is inadmissible.
[[nodiscard]] NewtonResult newton_solve(const VectorFn& g, const Eigen::VectorXd& x0,
                                        const NewtonOptions& opts = {});

}  // namespace lexee
