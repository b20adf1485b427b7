#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>

#include "lexee/data.hpp"
#include "lexee/parameters.hpp"

namespace lexee {

// Joint log likelihood of the observed surrogates and the outcome series:
// the marginal surrogate term plus the conditional outcome term, summed over
// subjects. Subjects contribute whichever parts they have.
[[nodiscard]] double joint_loglik(const ParamLayout& layout, const Eigen::VectorXd& full_values,
                                  const Dataset& data);
[[nodiscard]] Eigen::VectorXd joint_loglik_subjects(const ParamLayout& layout,
                                                    const Eigen::VectorXd& full_values,
                                                    const Dataset& data);

// Gradient of joint_loglik in the natural parameter coordinates: analytic in
// the regression and outcome-covariance blocks, central finite differences in
// the exposure block.
[[nodiscard]] Eigen::VectorXd score_full(const ParamLayout& layout,
                                         const Eigen::VectorXd& full_values, const Dataset& data,
                                         double fd_scale = 1e-6);

struct JointFitOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;   // unconstrained scale, per-subject mean objective
    double objective_tolerance = 1e-10;
    double hessian_fd_scale = 1e-4;
    double identifiability_rcond = 1e-8;
    bool check_identifiability = true;
    bool compute_covariance = true;
    bool throw_on_nonconvergence = true;
    std::optional<Eigen::VectorXd> start;  // natural full vector
};

struct JointFit {
    std::shared_ptr<const ParamLayout> layout;
    Eigen::VectorXd values;      // natural full vector at the maximum
    double loglik = 0.0;         // total over subjects
    int iterations = 0;
    bool converged = false;
    Eigen::MatrixXd covariance;  // inverse observed information (natural scale)
};

// Maximum likelihood for all parameters at once, quasi-Newton on the
// unconstrained scale, started from the two-stage fit unless a start is
// supplied. The reported covariance is the inverse observed information.
[[nodiscard]] JointFit fit_joint_mle(std::shared_ptr<const ParamLayout> layout,
                                     const Dataset& data, const JointFitOptions& opts = {});

}  // namespace lexee
