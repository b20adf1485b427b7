#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lexee/config.hpp"
#include "lexee/csv.hpp"
#include "lexee/errors.hpp"
#include "lexee/exposure_fit.hpp"
#include "lexee/inference.hpp"
#include "lexee/io.hpp"
#include "lexee/joint_mle.hpp"
#include "lexee/outcome_ee.hpp"
#include "lexee/simulation.hpp"
#include "lexee/version.hpp"

namespace {

using lexee::Error;
using ordered_json = nlohmann::ordered_json;

struct FitArgs {
    std::string data_x, data_y, model, out;
    std::string method;
    std::vector<double> beta_star;
    std::string outcome_cov;
    bool deterministic = false;
};

struct SimulateArgs {
    std::string design;
    std::string params;
    std::string out;
    int reps = -1;
    int n = -1;
    std::optional<std::uint64_t> seed;
};

[[noreturn]] void fail_usage(const std::string& message) {
    throw Error(lexee::ErrorClass::Usage, message);
}

int run_fit(const FitArgs& args) {
    lexee::ModelConfig config = lexee::load_config(args.model);
    if (!args.outcome_cov.empty()) {
        try {
            config.spec.outcome_cov = lexee::cov_kind_from_name(args.outcome_cov);
        } catch (const lexee::BadParam& e) {
            fail_usage(e.what());
        }
        lexee::validate_spec(config.spec);
    }

    lexee::Method method = config.default_method;
    if (!args.method.empty()) {
        try {
            method = lexee::method_from_name(args.method);
        } catch (const lexee::BadParam& e) {
            fail_usage(e.what());
        }
    }
    std::vector<double> beta_star = args.beta_star;
    if (beta_star.empty() && method == lexee::Method::Ee2)
        beta_star = config.default_beta_star;
    if (method == lexee::Method::Ee2 && beta_star.empty())
        fail_usage("--method ee2 needs fixed weights: pass --beta-star v1,v2,...");
    if (method != lexee::Method::Ee2 && !args.beta_star.empty())
        fail_usage("--beta-star only applies to --method ee2");

    const lexee::Dataset data = lexee::load_data(args.data_x, args.data_y, config.spec);
    int n_max = 0;
    for (const auto& s : data.subjects) n_max = std::max(n_max, s.n_occasions());
    if (n_max == 0) fail_usage("no outcome rows: nothing to fit");
    const auto layout = lexee::ParamLayout::build(config.spec, n_max);

    const int n_beta = static_cast<int>(config.spec.outcome_latents.size());
    if (method == lexee::Method::Ee2 && static_cast<int>(beta_star.size()) != n_beta)
        fail_usage("--beta-star needs " + std::to_string(n_beta) + " value(s), got " +
                   std::to_string(beta_star.size()));

    lexee::FitReport report;
    report.version = lexee::kVersion;
    report.method = lexee::method_name(method);
    if (method == lexee::Method::Ee2) report.beta_star = beta_star;
    report.deterministic = args.deterministic;
    report.config_echo = lexee::config_json(config);
    report.config_hash = lexee::text_hash_hex(report.config_echo);
    report.data_x_hash = lexee::file_hash_hex(args.data_x);
    report.data_y_hash = lexee::file_hash_hex(args.data_y);
    for (int i = 0; i < layout->size(); ++i) report.names.push_back(layout->name(i));

    Eigen::VectorXd values;
    const int k1 = layout->theta1_count();
    if (method == lexee::Method::Mle) {
        const lexee::JointFit fit = lexee::fit_joint_mle(layout, data);
        values = fit.values;
        report.converged = fit.converged;
        report.iterations = fit.iterations;
        report.loglik = fit.loglik;
        report.estimates = fit.values;
        report.se = fit.covariance.diagonal().array().max(0.0).sqrt();
        report.theta1_covariance = fit.covariance.topLeftCorner(k1, k1);
        report.theta1_naive.resize(0, 0);
        report.theta1_correction.resize(0, 0);
    } else {
        lexee::Scheme scheme = lexee::Scheme::ee1();
        if (method == lexee::Method::Rc) scheme = lexee::Scheme::rc();
        if (method == lexee::Method::Ee2)
            scheme = lexee::Scheme::ee2(
                Eigen::Map<const Eigen::VectorXd>(beta_star.data(),
                                                  static_cast<Eigen::Index>(beta_star.size())));
        const lexee::ExposureFit stage1 = lexee::fit_exposure_mle(layout, data);
        const lexee::OutcomeFit fit = lexee::fit_outcome_ee(layout, data, stage1.theta3, scheme);
        values = fit.full_values();
        report.converged = fit.converged && stage1.converged;
        report.iterations = fit.iterations + stage1.iterations;
        report.ee_norm = fit.ee_norm;
        report.estimates = values;
        const lexee::SandwichVar sv = lexee::sandwich_var(*layout, data, values, scheme);
        report.se = sv.covariance.diagonal().array().max(0.0).sqrt();
        report.theta1_covariance = sv.theta1;
        report.theta1_naive = sv.naive;
        report.theta1_correction = sv.correction;
    }

    if (report.converged) {
        std::vector<std::string> theta1_names(report.names.begin(),
                                              report.names.begin() + k1);
        report.wald = lexee::wald_report(theta1_names, report.estimates.head(k1),
                                         report.theta1_covariance);
    }

    lexee::write_text_file(args.out + ".report.json", lexee::report_json(report));
    lexee::write_csv_file(args.out + ".scores.csv", lexee::scores_header(config.spec),
                          lexee::scores_rows(*layout, values, data));
    std::cout << lexee::report_table(report);
    return 0;
}

int run_simulate(const SimulateArgs& args) {
    lexee::SimDesign design;
    if (!args.params.empty()) {
        design = lexee::sim_design_from_json(lexee::read_text_file(args.params));
        if (!args.design.empty() &&
            lexee::design_kind_from_name(args.design) != design.kind)
            fail_usage("--design disagrees with the design file");
    } else {
        if (args.design.empty()) fail_usage("pass --design or --params");
        design = lexee::default_design(lexee::design_kind_from_name(args.design));
    }
    if (args.reps > 0) design.replicates = args.reps;
    if (args.n > 0) design.n_subjects = args.n;
    if (args.seed) design.seed = *args.seed;

    const lexee::SimResult result = lexee::run_experiment(design);
    lexee::write_csv_file(args.out, lexee::sim_csv_header(), lexee::sim_csv_rows(result));

    const std::string design_text = lexee::sim_design_json(design);
    ordered_json manifest;
    manifest["tool"] = "lexee";
    manifest["version"] = lexee::kVersion;
    manifest["seed"] = design.seed;
    manifest["design_hash"] = lexee::text_hash_hex(design_text);
    manifest["design"] = ordered_json::parse(design_text);
    manifest["cells"] = result.cells.size();
    int failures = 0;
    for (const auto& cell : result.cells) failures += cell.replicates_failed;
    manifest["failed_replicates"] = failures;
    lexee::write_text_file(args.out + ".manifest.json", manifest.dump(2) + "\n");

    std::cout << "wrote " << result.cells.size() << " cells to " << args.out << " ("
              << failures << " failed replicates)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-exposure models for longitudinal outcomes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("lexee ") + lexee::kVersion);

    FitArgs fit_args;
    CLI::App* fit = app.add_subcommand("fit", "fit one model to one dataset");
    fit->add_option("--data-x", fit_args.data_x, "subjects file (wide: id, covariates, surrogates)")
        ->required();
    fit->add_option("--data-y", fit_args.data_y, "outcomes file (long: id, occasion, outcome, covariates)")
        ->required();
    fit->add_option("--model", fit_args.model, "model configuration (JSON)")->required();
    fit->add_option("--method", fit_args.method, "mle | ee1 | ee2 | rc (default: config)")
        ->check(CLI::IsMember({"mle", "ee1", "ee2", "rc"}));
    fit->add_option("--beta-star", fit_args.beta_star,
                    "fixed regression weights for ee2, comma separated")
        ->delimiter(',');
    fit->add_option("--outcome-cov", fit_args.outcome_cov,
                    "override the outcome covariance family")
        ->check(CLI::IsMember({"independence", "cs", "csh", "ar1", "har1", "unstructured"}));
    fit->add_flag("--deterministic", fit_args.deterministic,
                  "byte-stable output (no timestamps or environment echoes)");
    fit->add_option("--out", fit_args.out, "output prefix for .report.json and .scores.csv")
        ->required();

    SimulateArgs sim_args;
    CLI::App* simulate = app.add_subcommand("simulate", "run a simulation study");
    simulate->add_option("--design", sim_args.design, "bias | efficiency | varratio")
        ->check(CLI::IsMember({"bias", "efficiency", "varratio"}));
    simulate->add_option("--params", sim_args.params, "design file (JSON) overriding the defaults");
    simulate->add_option("--reps", sim_args.reps, "replicates per cell");
    simulate->add_option("--n", sim_args.n, "subjects per replicate");
    std::uint64_t seed_value = 0;
    CLI::Option* seed_opt = simulate->add_option("--seed", seed_value, "master seed");
    simulate->add_option("--out", sim_args.out, "results CSV path")->required();

    try {
        app.parse(argc, argv);
        if (*seed_opt) sim_args.seed = seed_value;
        if (fit->parsed()) return run_fit(fit_args);
        return run_simulate(sim_args);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
        ordered_json err;
        err["error"] = "UsageError";
        err["message"] = e.what();
        err["exit_code"] = 2;
        std::cerr << err.dump(2) << "\n";
        return 2;
    } catch (const Error& e) {
        ordered_json err;
        err["error"] = e.kind();
        err["message"] = e.what();
        err["exit_code"] = e.exit_code();
        std::cerr << err.dump(2) << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        ordered_json err;
        err["error"] = "InternalError";
        err["message"] = e.what();
        err["exit_code"] = 1;
        std::cerr << err.dump(2) << "\n";
        return 1;
    }
}
