#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <mutex>

#include "lexee/data.hpp"
#include "lexee/model_spec.hpp"
#include "lexee/parameters.hpp"

namespace lexee {

struct LatentMoments {
    Eigen::VectorXd mu_u;   // l
    Eigen::MatrixXd psi_u;  // l x l
};

struct SurrogateMoments {
    Eigen::VectorXd mu_x;     // p
    Eigen::MatrixXd omega_x;  // p x p
};

// Posterior (empirical-Bayes) exposure summary given the observed surrogates.
struct EbScores {
    Eigen::VectorXd u_tilde;    // l
    Eigen::MatrixXd psi_tilde;  // l x l
};

struct OutcomeMoments {
    Eigen::VectorXd mu;     // n_i
    Eigen::MatrixXd omega;  // n_i x n_i
};

// Everything computed for one evaluation point of the exposure parameters.
// Pattern-dependent matrix blocks (observed-submatrix Cholesky, posterior
// gain, posterior covariance) depend only on the observation mask, so they
// are memoized per pattern; per-subject work is mean shifts and quadratic
// forms. Instances are immutable after construction apart from the cache,
// which is guarded for concurrent use and transparent to results.
class MomentContext {
  public:
    MomentContext(const ModelSpec& spec, const Theta3View& theta3);

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] const Theta3View& theta3() const { return t3_; }

    // Marginal latent moments given subject covariates w:
    //   mu_u = (I - Gamma1)^-1 (alpha + Gamma2 w),  Psi_u the matching
    // covariance; Psi_u does not depend on w.
    [[nodiscard]] LatentMoments latent_marginal(const Eigen::VectorXd& w) const;

    // Marginal surrogate moments: mu_x = nu + Lambda mu_u + K w,
    // Omega_x = Lambda Psi_u Lambda' + Omega_delta.
    [[nodiscard]] SurrogateMoments surrogate_marginal(const Eigen::VectorXd& w) const;

    // Posterior exposure summary from the observed part of x. An all-missing
    // pattern returns the marginal moments (prior).
    [[nodiscard]] EbScores eb(const Eigen::VectorXd& x, const Mask& mask,
                              const Eigen::VectorXd& w) const;

    // Log density of the observed surrogate block; 0 when nothing observed.
    [[nodiscard]] double x_loglik(const SubjectData& s) const;

    // Analytic gradient of x_loglik with respect to the natural theta3
    // coordinates (layout order).
    [[nodiscard]] Eigen::VectorXd x_score(const SubjectData& s,
                                          const ParamLayout& layout) const;

    // Pattern-shared pieces, exposed for reuse by the fitting layers.
    struct PatternBlock {
        std::vector<int> observed;          // indices with mask true
        // LDLT rather than LLT: its unit-diagonal solve keeps the posterior
        // gain exactly 1 when the observed block is error-free (Omega_oo ==
        // Lambda_o Psi Lambda_o'), which downstream exactness checks rely on.
        Eigen::LDLT<Eigen::MatrixXd> llt;   // of Omega_x[obs, obs]
        double log_det = 0.0;
        Eigen::MatrixXd gain;               // l x n_obs: Psi_u Lambda_o' Omega_oo^-1
        Eigen::MatrixXd gain_lambda;        // l x l: gain * Lambda_o
        Eigen::MatrixXd psi_tilde;          // l x l
    };
    [[nodiscard]] const PatternBlock& pattern(const Mask& mask) const;

    [[nodiscard]] const Eigen::MatrixXd& resolvent() const { return a_; }  // (I-Gamma1)^-1
    [[nodiscard]] const Eigen::MatrixXd& psi_u() const { return psi_u_; }

  private:
    ModelSpec spec_;
    Theta3View t3_;
    Eigen::MatrixXd a_;       // (I - Gamma1)^-1
    Eigen::MatrixXd psi_u_;   // A Psi A'
    Eigen::MatrixXd omega_x_; // Lambda Psi_u Lambda' + Omega_delta

    mutable std::mutex cache_mutex_;
    mutable std::map<std::uint64_t, std::unique_ptr<PatternBlock>> cache_;
};

// Free-function forms of the individual moment computations.
[[nodiscard]] LatentMoments latent_marginal_moments(const MomentContext& ctx,
                                                    const Eigen::VectorXd& w);
[[nodiscard]] SurrogateMoments surrogate_marginal_moments(const MomentContext& ctx,
                                                          const Eigen::VectorXd& w);
[[nodiscard]] EbScores eb_scores(const MomentContext& ctx, const Eigen::VectorXd& x,
                                 const Mask& mask, const Eigen::VectorXd& w);

// Conditional outcome moments given the posterior exposure summary:
//   mu_j = beta0 + beta' u_tilde + kappa' z_j
//   Omega = Omega_eps(n_i block) + (beta' Psi_tilde beta) 11'
[[nodiscard]] OutcomeMoments outcome_conditional_moments(const Theta1View& theta1,
                                                         const Eigen::MatrixXd& omega_eps_full,
                                                         const EbScores& eb,
                                                         const Eigen::MatrixXd& z, int n_i);

// All per-subject moments in one bundle (used heavily by tests).
struct MomentSet {
    LatentMoments latent;
    SurrogateMoments surrogate;
    EbScores eb;
    OutcomeMoments outcome;
};
[[nodiscard]] MomentSet compute_moment_set(const ParamLayout& layout,
                                           const Eigen::VectorXd& values,
                                           const SubjectData& subject);

}  // namespace lexee
