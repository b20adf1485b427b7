#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>

#include "lexee/data.hpp"
#include "lexee/parameters.hpp"

namespace lexee {

// Embeds a natural theta3 slice into a full-length parameter vector, filling
// theta1 with zeros and theta2 with the layout's neutral values (the exposure
// stage never reads them).
[[nodiscard]] Eigen::VectorXd embed_theta3(const ParamLayout& layout,
                                           const Eigen::VectorXd& theta3);

// Marginal log likelihood of the observed surrogate blocks, summed over
// subjects (outcome data are ignored).
[[nodiscard]] double obs_loglik_x(const ParamLayout& layout, const Eigen::VectorXd& theta3,
                                  const Dataset& data);

// One log-likelihood contribution per subject, in dataset order.
[[nodiscard]] Eigen::VectorXd obs_loglik_x_subjects(const ParamLayout& layout,
                                                    const Eigen::VectorXd& theta3,
                                                    const Dataset& data);

// Gradient of obs_loglik_x with respect to the unconstrained coordinates of
// theta3, by central finite differences.
[[nodiscard]] Eigen::VectorXd score_theta3(const ParamLayout& layout,
                                           const Eigen::VectorXd& theta3, const Dataset& data,
                                           double fd_scale = 1e-6);

// Analytic per-subject scores on the natural theta3 scale: N x k3 matrix,
// one row per subject.
[[nodiscard]] Eigen::MatrixXd exposure_scores_natural(const ParamLayout& layout,
                                                      const Eigen::VectorXd& theta3,
                                                      const Dataset& data);

struct ExposureFitOptions {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;    // max-norm of the per-subject-mean gradient
    double objective_tolerance = 1e-10;  // relative objective change
    double identifiability_rcond = 1e-8;
    bool check_identifiability = true;
    bool throw_on_nonconvergence = true;
};

struct ExposureFit {
    std::shared_ptr<const ParamLayout> layout;
    Eigen::VectorXd theta3;  // natural scale
    double loglik = 0.0;     // total over subjects at theta3
    int iterations = 0;
    bool converged = false;
    std::map<std::uint64_t, int> pattern_counts;
    // Observed information of the mean log likelihood on the unconstrained
    // scale (used for the identifiability check).
    Eigen::MatrixXd info_unconstrained;
};

// Data-driven starting point for the exposure parameters.
[[nodiscard]] Eigen::VectorXd exposure_start(const ParamLayout& layout, const Dataset& data);

// Maximizes obs_loglik_x by quasi-Newton iteration on the unconstrained
// scale. Throws NotConverged after max_iterations (unless configured to
// return the best iterate with converged=false) and Unidentified when the
// observed information at the optimum is numerically singular.
[[nodiscard]] ExposureFit fit_exposure_mle(std::shared_ptr<const ParamLayout> layout,
                                           const Dataset& data,
                                           const Eigen::VectorXd* init = nullptr,
                                           const ExposureFitOptions& opts = {});

}  // namespace lexee
