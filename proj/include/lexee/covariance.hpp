#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace lexee {

// Residual covariance families. The first six parameterize the outcome
// residual covariance; Diagonal and DiagonalAr1Blocks parameterize the
// measurement-error covariance (where variances may legitimately be zero).
enum class CovKind {
    Independence,       // sigma2 * I                                  params: [sigma2]
    CS,                 // diag(sigma2) + sigma_w2 * 11'               params: [sigma2, sigma_w2]
    CSH,                // diag(v_1..v_n) + sigma_w2 * 11'             params: [v_1..v_n, sigma_w2]
    AR1,                // sigma2 * rho^|j-k|                          params: [sigma2, rho]
    HAR1,               // rho^|j-k| * sqrt(v_j v_k)                   params: [v_1..v_n, rho]
    Unstructured,       // symmetric PD, lower triangle row by row     params: [s11, s21, s22, ...]
    Diagonal,           // diag(v_1..v_n), v >= 0 allowed              params: [v_1..v_n]
    DiagonalAr1Blocks,  // Diagonal plus per-block AR(1) correlation   params: [v_1..v_n, rho_b...]
};

[[nodiscard]] std::string cov_kind_name(CovKind kind);
[[nodiscard]] CovKind cov_kind_from_name(const std::string& name);

struct CovStructure {
    CovKind kind = CovKind::Independence;
    int dim = 1;
    // Only for DiagonalAr1Blocks: disjoint ordered index groups sharing an
    // AR(1) correlation across positions within the group.
    std::vector<std::vector<int>> blocks;
};

[[nodiscard]] int cov_param_count(const CovStructure& s);

// Human-readable names of the parameters, in packing order.
[[nodiscard]] std::vector<std::string> cov_param_names(const CovStructure& s,
                                                       const std::string& prefix);

struct CovMatrices {
    Eigen::MatrixXd value;
    std::vector<Eigen::MatrixXd> derivs;  // d value / d params[k], same order as params
};

// Builds the covariance matrix and (optionally) its analytic derivative with
// respect to every parameter. Throws BadParam when the parameters leave the
// admissible region: variances must be positive (non-negative for the
// measurement-error kinds), correlations inside (-1, 1), and the assembled
// matrix positive definite (positive semi-definite for measurement-error
// kinds, whose zero-variance rows are allowed).
[[nodiscard]] CovMatrices build_cov(const CovStructure& s, const Eigen::VectorXd& params,
                                    bool with_derivs = true);

// True when `params` can be passed to build_cov without throwing.
[[nodiscard]] bool cov_params_admissible(const CovStructure& s, const Eigen::VectorXd& params);

}  // namespace lexee
