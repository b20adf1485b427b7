#pragma once

#include <string>
#include <vector>

#include "lexee/model_spec.hpp"

namespace lexee {

enum class Method { Mle, Ee1, Ee2, Rc };

[[nodiscard]] std::string method_name(Method m);
[[nodiscard]] Method method_from_name(const std::string& name);

// A parsed model configuration: the validated structural model plus the
// fitting defaults the document declares (all overridable on the command
// line).
struct ModelConfig {
    ModelSpec spec;
    Method default_method = Method::Ee1;
    std::vector<double> default_beta_star;  // meaningful for the fixed-weight scheme
};

// Strict JSON parser for model configurations. Shape:
//
//   {
//     "latents": ["u1", ...],
//     "surrogates": [
//       {"name": "x1",
//        "loadings": {"u1": 1.0, "u2": "free"},   // omitted latents load 0
//        "intercept": "free",                       // or a number; default free
//        "item_bias": {"w1": "free"},              // omitted covariates: 0
//        "error_variance": "free"}                  // or a number; default free
//     ],
//     "subject_covariates": ["w1", ...],            // default []
//     "occasion_covariates": ["z1", ...],           // default []
//     "latent_regressions": [
//       {"target": "u1",
//        "on_latents": {"u2": "free"},             // omitted: 0
//        "on_covariates": {"w1": "free"}}
//     ],
//     "error_correlation_blocks": [["x1","x2"]],    // shared AR(1) groups
//     "latent_covariance": "unstructured",          // or "diagonal"
//     "outcome": {"name": "y",
//                 "latents": ["u1"],
//                 "covariance": "cs"},
//     "defaults": {"method": "ee1", "beta_star": [0.5]}
//   }
//
// Every coefficient slot is either the string "free" or a number (a fixed
// constant). Unknown keys anywhere are errors. The returned spec has passed
// full structural validation.
[[nodiscard]] ModelConfig config_from_json(const std::string& text,
                                           const std::string& source_label = "config");
[[nodiscard]] ModelConfig load_config(const std::string& path);

// Canonical serialization (stable key order; fixed slots as numbers, free
// slots as "free"). Parsing the output reproduces the config exactly.
[[nodiscard]] std::string config_json(const ModelConfig& config);

}  // namespace lexee
