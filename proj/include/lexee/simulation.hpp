#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lexee/data.hpp"
#include "lexee/model_spec.hpp"
#include "lexee/parameters.hpp"

namespace lexee {

enum class DesignKind { Bias, Efficiency, VarRatio };

// How surrogate observation patterns are assigned (over nested "first k
// observed" patterns, k = 1..p):
//   Complete        every surrogate observed;
//   Uniform         all nested patterns equally likely;
//   VarProportional pattern probability proportional to var(U | observed)
//                   (mass on sparse patterns);
//   VarInverse      proportional to 1/var(U | observed) (mass on rich ones).
enum class Missingness { Complete, Uniform, VarProportional, VarInverse };

[[nodiscard]] std::string design_kind_name(DesignKind k);
[[nodiscard]] DesignKind design_kind_from_name(const std::string& name);
[[nodiscard]] std::string missingness_name(Missingness m);
[[nodiscard]] Missingness missingness_from_name(const std::string& name);

// One simulation study: a single-latent generator (U with variance psi, p
// equal-loading surrogates, n equally spaced outcome occasions, no
// covariates) plus the fit-time model and the experiment grids. Every field
// is an input with declared defaults, not a constant.
struct SimDesign {
    DesignKind kind = DesignKind::Bias;
    int n_subjects = 500;
    int replicates = 200;
    std::uint64_t seed = 20090830;

    int p = 3;
    int n_occasions = 4;
    double loading = 1.0;          // shared true loading
    double latent_variance = 1.0;  // var(U)
    double me_fraction = 0.36;     // var(delta_j) / var(X_j)
    double beta0 = 0.0;

    std::vector<double> beta_grid{1.0};
    std::vector<double> rho_grid{0.5};  // truth autocorrelation (AR-type truths)

    // Truth for the outcome residual covariance.
    CovKind truth_cov = CovKind::HAR1;
    std::vector<double> occasion_variances{1.0, 2.5, 5.0, 7.5};  // HAR1 diag
    double cs_sigma2 = 2.0;    // CS truth: within-subject noise
    double cs_sigma_w2 = 2.0;  // CS truth: shared subject effect

    CovKind fit_cov = CovKind::CS;  // structure assumed at fit time
    Missingness missingness = Missingness::Complete;
    std::vector<double> beta_star_grid{};  // fixed-weight grid (variance-ratio study)

    bool fix_surrogate_intercepts = false;  // pin nu at 0 in the fit model
    bool include_mle = true;
    bool compute_sandwich = true;  // per-replicate robust SEs and coverage
    int expected_route_subjects = 20000;  // sample size for the expected-information route
};

[[nodiscard]] SimDesign default_bias_design();
[[nodiscard]] SimDesign default_efficiency_design();
[[nodiscard]] SimDesign default_varratio_design();
[[nodiscard]] SimDesign default_design(DesignKind kind);

// Canonical JSON serialization of a design (stable key order, full
// precision) and its strict inverse: unknown keys are errors.
[[nodiscard]] std::string sim_design_json(const SimDesign& design);
[[nodiscard]] SimDesign sim_design_from_json(const std::string& text);

// FNV-1a 64-bit hash, used to fingerprint designs in run manifests.
[[nodiscard]] std::uint64_t fnv1a_hash(const std::string& text);

// Deterministic replicate-stream seeding: identical (seed, cell, replicate)
// always yields the same stream, independent of execution order.
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cell,
                                        std::uint64_t replicate);

// Seeded generator with explicit uniform and Gaussian draws (Box-Muller), so
// generated data are bit-stable across standard-library implementations.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}
    double uniform();  // open interval (0, 1)
    double normal();
    Eigen::VectorXd normal_vector(int n);

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Fit-time model implied by a design.
[[nodiscard]] ModelSpec sim_model_spec(const SimDesign& design);
[[nodiscard]] std::shared_ptr<const ParamLayout> sim_layout(const SimDesign& design);

// The generator's parameter values expressed in the fit layout; valid for
// the theta2 block only when fit_cov equals truth_cov (otherwise theta2 is
// filled with neutral values, since the truth is not representable).
[[nodiscard]] Eigen::VectorXd sim_truth_values(const SimDesign& design, double beta, double rho);

// Measurement-error variance implied by the me_fraction interpretation
// var(delta_j)/var(X_j).
[[nodiscard]] double measurement_error_variance(const SimDesign& design);

// Posterior variance var(U | first k surrogates observed) and the nested
// pattern distribution the missingness scenarios induce (index k-1 holds the
// "first k observed" probability).
[[nodiscard]] double posterior_variance_first_k(const SimDesign& design, int k);
[[nodiscard]] Eigen::VectorXd pattern_probabilities(const SimDesign& design);

// Draws one replicate dataset for the given grid cell. Subjects carry their
// true latent values for oracle checks.
[[nodiscard]] Dataset gen_dataset(const SimDesign& design, int beta_index, int rho_index,
                                  int replicate);

// One result row: an estimator in a grid cell.
struct SimCell {
    std::string design;
    double beta_true = 0.0;
    double rho = std::numeric_limits<double>::quiet_NaN();
    std::string scheme;  // mle | ee1 | ee2 | rc
    double beta_star = std::numeric_limits<double>::quiet_NaN();
    std::string fit_structure;
    int replicates_ok = 0;
    int replicates_failed = 0;
    double mean_estimate = std::numeric_limits<double>::quiet_NaN();
    double bias = std::numeric_limits<double>::quiet_NaN();
    double bias_mc_se = std::numeric_limits<double>::quiet_NaN();
    double empirical_variance = std::numeric_limits<double>::quiet_NaN();
    double empirical_mse = std::numeric_limits<double>::quiet_NaN();
    double mean_sandwich_se = std::numeric_limits<double>::quiet_NaN();
    double median_sandwich_se = std::numeric_limits<double>::quiet_NaN();
    double ci95_coverage = std::numeric_limits<double>::quiet_NaN();
    double var_ratio_vs_ee1 = std::numeric_limits<double>::quiet_NaN();
    double var_ratio_mc_se = std::numeric_limits<double>::quiet_NaN();
    double ratio_minus_truth_star = std::numeric_limits<double>::quiet_NaN();
    double ratio_minus_truth_star_mc_se = std::numeric_limits<double>::quiet_NaN();
    double eff_ratio_empirical = std::numeric_limits<double>::quiet_NaN();
    double eff_ratio_empirical_mc_se = std::numeric_limits<double>::quiet_NaN();
    double eff_ratio_expected = std::numeric_limits<double>::quiet_NaN();
};

struct SimResult {
    SimDesign design;
    std::vector<SimCell> cells;
};

[[nodiscard]] SimResult run_bias_experiment(const SimDesign& design);
[[nodiscard]] SimResult run_efficiency_experiment(const SimDesign& design);
[[nodiscard]] SimResult run_varratio_experiment(const SimDesign& design);
[[nodiscard]] SimResult run_experiment(const SimDesign& design);

// Plot-ready CSV projection (fixed header; empty field encodes NaN).
[[nodiscard]] std::vector<std::string> sim_csv_header();
[[nodiscard]] std::vector<std::vector<std::string>> sim_csv_rows(const SimResult& result);

// Monte Carlo error helpers.
[[nodiscard]] double mean_of(const std::vector<double>& v);
[[nodiscard]] double variance_of(const std::vector<double>& v);  // unbiased
[[nodiscard]] double mc_se_mean(const std::vector<double>& v);
[[nodiscard]] double median_of(std::vector<double> v);
// Leave-one-replicate-out jackknife standard error of a statistic of the
// replicate matrix (rows = replicates).
[[nodiscard]] double jackknife_se(const Eigen::MatrixXd& reps,
                                  const std::function<double(const Eigen::MatrixXd&)>& stat);

}  // namespace lexee
