#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lexee/config.hpp"
#include "lexee/data.hpp"
#include "lexee/inference.hpp"
#include "lexee/model_spec.hpp"

namespace lexee {

// Two-file dataset layout. Subjects file (wide): column `id`, the declared
// subject-level covariates, then the surrogates — an empty surrogate cell
// means "not observed" and sets the missingness mask. Outcomes file (long):
// `id`, `occasion` (1..n_i, consecutive), the outcome column, then the
// occasion-level covariates. Column order is free; the column *set* must
// equal the declaration exactly. Subjects without outcome rows are kept
// (they still inform the exposure side).
[[nodiscard]] Dataset load_data(const std::string& subjects_path,
                                const std::string& outcomes_path, const ModelSpec& spec);

// Exact inverse of load_data for generated data: writes the two files such
// that reloading reproduces the dataset (ids, masks, values).
void write_dataset(const std::string& subjects_path, const std::string& outcomes_path,
                   const Dataset& data, const ModelSpec& spec);

// Per-subject factor scores at a fitted exposure parameter: the conditional
// latent means and the diagonal of the conditional latent covariance, one
// row per subject. These are the reusable inputs for downstream outcome
// analyses.
[[nodiscard]] std::vector<std::string> scores_header(const ModelSpec& spec);
[[nodiscard]] std::vector<std::vector<std::string>> scores_rows(
    const ParamLayout& layout, const Eigen::VectorXd& full_values, const Dataset& data);

// Everything one fit emits, in a form that serializes to JSON and back
// without loss. `se` carries NaN where no standard error applies.
struct FitReport {
    std::string version;
    std::string method;              // mle | ee1 | ee2 | rc
    std::vector<double> beta_star;   // non-empty only for the fixed-weight scheme
    bool deterministic = false;
    std::string config_hash;         // fnv1a of the canonical config text, hex
    std::string data_x_hash;         // fnv1a of the subjects file bytes, hex
    std::string data_y_hash;         // fnv1a of the outcomes file bytes, hex
    std::string config_echo;         // canonical config JSON text
    bool converged = false;
    int iterations = 0;
    double loglik = std::numeric_limits<double>::quiet_NaN();   // likelihood route
    double ee_norm = std::numeric_limits<double>::quiet_NaN();  // equation route
    std::vector<std::string> names;  // every parameter, layout order
    Eigen::VectorXd estimates;
    Eigen::VectorXd se;
    WaldReport wald;                     // regression-block rows; empty if not converged
    Eigen::MatrixXd theta1_covariance;   // robust (equations) or information (likelihood)
    Eigen::MatrixXd theta1_naive;        // size 0 on the likelihood route
    Eigen::MatrixXd theta1_correction;   // size 0 on the likelihood route
};

[[nodiscard]] std::string report_json(const FitReport& report);
[[nodiscard]] FitReport report_from_json(const std::string& text);
[[nodiscard]] bool report_equal(const FitReport& a, const FitReport& b);

// Fixed-width human-readable summary (4-decimal display) of the same fit.
[[nodiscard]] std::string report_table(const FitReport& report);

// 64-bit FNV-1a of a file's bytes / a string, as a 16-digit hex string.
[[nodiscard]] std::string file_hash_hex(const std::string& path);
[[nodiscard]] std::string text_hash_hex(const std::string& text);

[[nodiscard]] std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace lexee
