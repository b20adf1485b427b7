#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lexee/data.hpp"
#include "lexee/outcome_ee.hpp"
#include "lexee/parameters.hpp"

namespace lexee {

// Empirical outer product of the per-subject stacked estimating-function
// contributions: (1/N) sum_i S_i S_i'.
[[nodiscard]] Eigen::MatrixXd estimate_A(const ParamLayout& layout, const Dataset& data,
                                         const Eigen::VectorXd& full_values,
                                         const Scheme& scheme);

// Jacobian of the averaged stacked equations with respect to the natural
// parameters, by central differences with step 1e-6 * max(1, |theta_k|).
// A second pass at twice the step must agree entrywise to 1e-3 relative
// (NumericJacobianFailure otherwise).
[[nodiscard]] Eigen::MatrixXd estimate_B(const ParamLayout& layout, const Dataset& data,
                                         const Eigen::VectorXd& full_values,
                                         const Scheme& scheme);

struct SandwichParts {
    Eigen::MatrixXd a;  // k x k outer-product matrix
    Eigen::MatrixXd b;  // k x k equation Jacobian
    int k1 = 0, k2 = 0, k3 = 0;
    int n_subjects = 0;
};

[[nodiscard]] SandwichParts sandwich_parts(const ParamLayout& layout, const Dataset& data,
                                           const Eigen::VectorXd& full_values,
                                           const Scheme& scheme);

// Robust covariance of the stacked estimator, var(theta_hat) = B^-1 A B^-T/N,
// together with the decomposition of the regression block into the naive
// term and the exposure-estimation correction:
//   var(theta1_hat) = B11^-1 A11 B11^-T / N
//                   + B11^-1 B13 var(theta3_hat) B13' B11^-T.
// The assembly imposes the blocks that vanish in expectation at the truth
// (B12, A13, and their transposes; B31/B32 are structural zeros), which makes
// the full-matrix regression block and the two-term decomposition agree
// exactly and keeps the correction a congruence of var(theta3_hat), hence
// positive semidefinite.
struct SandwichVar {
    Eigen::MatrixXd covariance;   // k x k
    Eigen::MatrixXd theta1;       // k1 x k1 block of `covariance`
    Eigen::MatrixXd naive;        // k1 x k1
    Eigen::MatrixXd correction;   // k1 x k1
    Eigen::MatrixXd theta3;       // k3 x k3: var(theta3_hat)
};

[[nodiscard]] SandwichVar sandwich_var(const SandwichParts& parts);

// Convenience: parts + assembly in one call at a fitted point.
[[nodiscard]] SandwichVar sandwich_var(const ParamLayout& layout, const Dataset& data,
                                       const Eigen::VectorXd& full_values, const Scheme& scheme);

struct WaldRow {
    std::string name;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p_two_sided = 0.0;
    double p_one_sided = 0.0;  // normal tail beyond |z|, i.e. half the two-sided value
    double ci_low = 0.0;
    double ci_high = 0.0;
};

struct WaldReport {
    std::vector<WaldRow> rows;
};

// Wald table: z = estimate/se, two-sided normal p, the one-sided tail
// (labeled, since some reporting conventions use it), and the 95% interval
// estimate +- 1.96 se.
[[nodiscard]] WaldReport wald_report(const std::vector<std::string>& names,
                                     const Eigen::VectorXd& estimates,
                                     const Eigen::MatrixXd& covariance);

}  // namespace lexee
