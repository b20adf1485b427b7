#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "lexee/data.hpp"
#include "lexee/moments.hpp"
#include "lexee/parameters.hpp"

namespace lexee {

// Weighting scheme for the outcome-stage estimating equations. All three
// share the same mean equations; they differ only in the working covariance:
//   EE1: Omega_eps + (beta' Psi_tilde beta) 11'  with the current beta,
//        refreshed every outer iteration;
//   EE2: the same inflation evaluated at a fixed beta_star;
//   RC:  Omega_eps alone (no inflation), so beta_star is ignored.
enum class SchemeKind { EE1, EE2, RC };

struct Scheme {
    SchemeKind kind = SchemeKind::EE1;
    Eigen::VectorXd beta_star;  // one slot per outcome latent; EE2 only

    static Scheme ee1() { return Scheme{SchemeKind::EE1, {}}; }
    static Scheme ee2(Eigen::VectorXd beta_star) {
        return Scheme{SchemeKind::EE2, std::move(beta_star)};
    }
    static Scheme rc() { return Scheme{SchemeKind::RC, {}}; }
};

[[nodiscard]] std::string scheme_name(const Scheme& s);

// Working covariance for one subject with n_i occasions.
[[nodiscard]] Eigen::MatrixXd working_cov(const Scheme& scheme, const Theta1View& theta1,
                                          const Eigen::MatrixXd& omega_eps_full,
                                          const Eigen::MatrixXd& psi_tilde,
                                          const std::vector<int>& outcome_latents, int n_i);

// Per-subject inputs the outcome stage reuses across iterations: posterior
// exposure summaries at the fitted theta3 and the regression design rows.
struct EEWorkspace {
    std::shared_ptr<const ParamLayout> layout;
    const Dataset* data = nullptr;
    std::vector<EbScores> eb;               // per subject
    std::vector<Eigen::MatrixXd> design;    // n_i x theta1_count
};
[[nodiscard]] EEWorkspace make_ee_workspace(std::shared_ptr<const ParamLayout> layout,
                                            const Dataset& data,
                                            const Eigen::VectorXd& theta3);

// Generalized least squares for the mean parameters with the given fixed
// weights. Throws RankDeficient when the design has dependent columns.
[[nodiscard]] Eigen::VectorXd solve_theta1(const EEWorkspace& w, const Scheme& scheme,
                                           const Theta1View& weight_beta,
                                           const Eigen::VectorXd& theta2);

// Solves the covariance-parameter trace equations with weights held at the
// supplied (scheme, weight_beta, theta2_weights) and the model-implied
// conditional covariance evaluated at theta1. Families linear in their
// parameters solve in closed form; AR(1) families run a damped Newton
// iteration from theta2_init.
[[nodiscard]] Eigen::VectorXd solve_theta2(const EEWorkspace& w, const Scheme& scheme,
                                           const Theta1View& theta1,
                                           const Eigen::VectorXd& theta2_weights,
                                           const Eigen::VectorXd& theta2_init);

// Per-subject-average stacked outcome equations (theta1 block then theta2
// block) with weights rebuilt at the supplied point.
[[nodiscard]] Eigen::VectorXd outcome_equations(const EEWorkspace& w, const Scheme& scheme,
                                                const Eigen::VectorXd& theta1,
                                                const Eigen::VectorXd& theta2);

struct OutcomeFitOptions {
    int max_iterations = 200;
    double ee_tolerance = 1e-8;  // max-norm of the per-subject-average equations
    bool throw_on_nonconvergence = true;
};

struct PatternWeight {
    std::uint64_t mask = 0;
    int count = 0;
    Eigen::MatrixXd psi_tilde;
};

struct OutcomeFit {
    std::shared_ptr<const ParamLayout> layout;
    Scheme scheme;
    Eigen::VectorXd theta1, theta2, theta3;  // natural scale
    double ee_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<PatternWeight> pattern_weights;

    [[nodiscard]] Eigen::VectorXd full_values() const;
};

// Two-stage outcome fit given the exposure estimate theta3: alternates
// solve_theta1 / solve_theta2; EE1 additionally refreshes beta inside the
// weights each iteration, halving the step whenever the stacked equation
// norm increases.
[[nodiscard]] OutcomeFit fit_outcome_ee(std::shared_ptr<const ParamLayout> layout,
                                        const Dataset& data, const Eigen::VectorXd& theta3,
                                        const Scheme& scheme, const OutcomeFitOptions& opts = {});

// Stacked estimating-function contributions, one row per subject, at an
// arbitrary full parameter vector: [mean equations | covariance trace
// equations | exposure score]. This is the function whose empirical outer
// product and Jacobian feed the sandwich covariance.
[[nodiscard]] Eigen::MatrixXd ee_contributions(const ParamLayout& layout, const Dataset& data,
                                               const Eigen::VectorXd& full_values,
                                               const Scheme& scheme);

}  // namespace lexee
