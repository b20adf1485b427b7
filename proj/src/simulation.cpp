#include "lexee/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>

#include <json.hpp>

#include "lexee/covariance.hpp"
#include "lexee/errors.hpp"
#include "lexee/exposure_fit.hpp"
#include "lexee/inference.hpp"
#include "lexee/joint_mle.hpp"
#include "lexee/optim.hpp"
#include "lexee/outcome_ee.hpp"

namespace lexee {

namespace {

using ordered_json = nlohmann::ordered_json;

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void validate_design(const SimDesign& d) {
    std::vector<std::string> problems;
    if (d.n_subjects < 2) problems.push_back("subjects must be at least 2");
    if (d.replicates < 2) problems.push_back("replicates must be at least 2");
    if (d.p < 1 || d.p > 64) problems.push_back("surrogate count must be in 1..64");
    if (d.n_occasions < 1) problems.push_back("occasion count must be positive");
    if (!(d.loading != 0.0)) problems.push_back("loading must be non-zero");
    if (!(d.latent_variance > 0.0)) problems.push_back("latent variance must be positive");
    if (!(d.me_fraction >= 0.0 && d.me_fraction < 1.0))
        problems.push_back("measurement fraction must lie in [0, 1)");
    if (d.beta_grid.empty()) problems.push_back("beta grid must be non-empty");
    const bool rho_truth = d.truth_cov == CovKind::HAR1 || d.truth_cov == CovKind::AR1;
    if (rho_truth && d.rho_grid.empty())
        problems.push_back("rho grid must be non-empty for autoregressive truth");
    for (double r : d.rho_grid)
        if (!(r > -1.0 && r < 1.0)) problems.push_back("rho values must lie in (-1, 1)");
    const bool occ_truth = d.truth_cov == CovKind::HAR1 || d.truth_cov == CovKind::CSH;
    if (occ_truth &&
        static_cast<int>(d.occasion_variances.size()) != d.n_occasions)
        problems.push_back("occasion variances must list one value per occasion");
    for (double v : d.occasion_variances)
        if (!(v > 0.0)) problems.push_back("occasion variances must be positive");
    if (d.truth_cov == CovKind::Unstructured || d.truth_cov == CovKind::Diagonal ||
        d.truth_cov == CovKind::DiagonalAr1Blocks)
        problems.push_back("generator supports independence/cs/csh/ar1/har1 truth only");
    if (d.kind == DesignKind::VarRatio && d.beta_star_grid.empty())
        problems.push_back("variance-ratio design needs a beta-star grid");
    if (d.kind == DesignKind::Efficiency && d.fit_cov != d.truth_cov)
        problems.push_back("efficiency design requires the fit covariance to match the truth");
    if (d.expected_route_subjects < 100)
        problems.push_back("expected-route sample must have at least 100 subjects");
    if (!problems.empty()) {
        std::string msg = "invalid simulation design:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw BadDesign(msg);
    }
}

Eigen::VectorXd truth_cov_params(const SimDesign& d, double rho) {
    switch (d.truth_cov) {
        case CovKind::Independence:
            return Eigen::VectorXd::Constant(1, d.cs_sigma2);
        case CovKind::CS:
            return (Eigen::VectorXd(2) << d.cs_sigma2, d.cs_sigma_w2).finished();
        case CovKind::CSH: {
            Eigen::VectorXd v(d.n_occasions + 1);
            for (int j = 0; j < d.n_occasions; ++j) v[j] = d.occasion_variances[j];
            v[d.n_occasions] = d.cs_sigma_w2;
            return v;
        }
        case CovKind::AR1:
            return (Eigen::VectorXd(2) << d.cs_sigma2, rho).finished();
        case CovKind::HAR1: {
            Eigen::VectorXd v(d.n_occasions + 1);
            for (int j = 0; j < d.n_occasions; ++j) v[j] = d.occasion_variances[j];
            v[d.n_occasions] = rho;
            return v;
        }
        default:
            throw BadDesign("unsupported truth covariance family");
    }
}

double rho_at(const SimDesign& d, int rho_index) {
    if (d.rho_grid.empty()) return 0.0;
    if (rho_index < 0 || rho_index >= static_cast<int>(d.rho_grid.size()))
        throw BadDesign("rho index outside the design grid");
    return d.rho_grid[rho_index];
}

// A per-replicate fit attempt for one estimator.
struct RepOutcome {
    bool ok = false;
    double est = std::numeric_limits<double>::quiet_NaN();
    double se = std::numeric_limits<double>::quiet_NaN();
};

SimCell summarize(const SimDesign& d, double beta_true, double rho_or_nan,
                  const std::string& scheme, double beta_star,
                  const std::vector<RepOutcome>& reps) {
    SimCell cell;
    cell.design = design_kind_name(d.kind);
    cell.beta_true = beta_true;
    cell.rho = rho_or_nan;
    cell.scheme = scheme;
    cell.beta_star = beta_star;
    cell.fit_structure = cov_kind_name(d.fit_cov);

    std::vector<double> est, ses;
    int covered = 0, with_se = 0;
    for (const RepOutcome& r : reps) {
        if (!r.ok) {
            ++cell.replicates_failed;
            continue;
        }
        ++cell.replicates_ok;
        est.push_back(r.est);
        if (std::isfinite(r.se)) {
            ses.push_back(r.se);
            ++with_se;
            if (std::abs(r.est - beta_true) <= 1.96 * r.se) ++covered;
        }
    }
    if (!est.empty()) {
        cell.mean_estimate = mean_of(est);
        cell.bias = cell.mean_estimate - beta_true;
        cell.bias_mc_se = mc_se_mean(est);
        cell.empirical_variance = variance_of(est);
        double mse = 0.0;
        for (double e : est) mse += (e - beta_true) * (e - beta_true);
        cell.empirical_mse = mse / static_cast<double>(est.size());
    }
    if (with_se > 0) {
        cell.mean_sandwich_se = mean_of(ses);
        cell.median_sandwich_se = median_of(ses);
        cell.ci95_coverage = static_cast<double>(covered) / with_se;
    }
    return cell;
}

// Replicates where every listed estimator succeeded, as an R x m matrix of
// estimates (column order follows `tracks`).
Eigen::MatrixXd common_estimates(const std::vector<const std::vector<RepOutcome>*>& tracks) {
    const std::size_t reps = tracks.front()->size();
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t r = 0; r < reps; ++r) {
        bool all_ok = true;
        for (const auto* t : tracks) all_ok = all_ok && (*t)[r].ok;
        if (!all_ok) continue;
        Eigen::VectorXd row(tracks.size());
        for (std::size_t c = 0; c < tracks.size(); ++c) row[c] = (*tracks[c])[r].est;
        rows.push_back(row);
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(tracks.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r];
    return m;
}

double column_variance(const Eigen::MatrixXd& m, int col) {
    const Eigen::VectorXd c = m.col(col);
    const double mu = c.mean();
    return (c.array() - mu).square().sum() / static_cast<double>(c.size() - 1);
}

}  // namespace

std::string design_kind_name(DesignKind k) {
    switch (k) {
        case DesignKind::Bias:
            return "bias";
        case DesignKind::Efficiency:
            return "efficiency";
        case DesignKind::VarRatio:
            return "varratio";
    }
    throw BadDesign("unknown design kind");
}

DesignKind design_kind_from_name(const std::string& name) {
    if (name == "bias") return DesignKind::Bias;
    if (name == "efficiency") return DesignKind::Efficiency;
    if (name == "varratio") return DesignKind::VarRatio;
    throw BadDesign("unknown design '" + name + "' (expected bias, efficiency or varratio)");
}

std::string missingness_name(Missingness m) {
    switch (m) {
        case Missingness::Complete:
            return "complete";
        case Missingness::Uniform:
            return "uniform";
        case Missingness::VarProportional:
            return "var_proportional";
        case Missingness::VarInverse:
            return "var_inverse";
    }
    throw BadDesign("unknown missingness scenario");
}

Missingness missingness_from_name(const std::string& name) {
    if (name == "complete") return Missingness::Complete;
    if (name == "uniform") return Missingness::Uniform;
    if (name == "var_proportional") return Missingness::VarProportional;
    if (name == "var_inverse") return Missingness::VarInverse;
    throw BadDesign("unknown missingness scenario '" + name + "'");
}

SimDesign default_bias_design() {
    SimDesign d;
    d.kind = DesignKind::Bias;
    return d;
}

SimDesign default_efficiency_design() {
    SimDesign d;
    d.kind = DesignKind::Efficiency;
    d.replicates = 300;
    d.me_fraction = 0.22;
    d.beta_grid = {0.5};
    d.rho_grid = {};
    d.truth_cov = CovKind::CS;
    d.fit_cov = CovKind::CS;
    d.occasion_variances = {};
    d.compute_sandwich = false;
    return d;
}

SimDesign default_varratio_design() {
    SimDesign d;
    d.kind = DesignKind::VarRatio;
    d.p = 12;
    d.beta_grid = {2.0};
    d.rho_grid = {};
    d.truth_cov = CovKind::CS;
    d.fit_cov = CovKind::CS;
    d.occasion_variances = {};
    d.missingness = Missingness::VarProportional;
    d.beta_star_grid = {0.0, 1.0, 2.0, 3.0};
    d.fix_surrogate_intercepts = true;
    d.include_mle = false;
    d.compute_sandwich = false;
    return d;
}

SimDesign default_design(DesignKind kind) {
    switch (kind) {
        case DesignKind::Bias:
            return default_bias_design();
        case DesignKind::Efficiency:
            return default_efficiency_design();
        case DesignKind::VarRatio:
            return default_varratio_design();
    }
    throw BadDesign("unknown design kind");
}

std::string sim_design_json(const SimDesign& d) {
    ordered_json j;
    j["design"] = design_kind_name(d.kind);
    j["subjects"] = d.n_subjects;
    j["replicates"] = d.replicates;
    j["seed"] = d.seed;
    j["surrogates"] = d.p;
    j["occasions"] = d.n_occasions;
    j["loading"] = d.loading;
    j["latent_variance"] = d.latent_variance;
    j["measurement_fraction"] = d.me_fraction;
    j["intercept"] = d.beta0;
    j["beta_grid"] = d.beta_grid;
    j["rho_grid"] = d.rho_grid;
    j["truth_covariance"] = cov_kind_name(d.truth_cov);
    j["occasion_variances"] = d.occasion_variances;
    j["cs_sigma2"] = d.cs_sigma2;
    j["cs_sigma_w2"] = d.cs_sigma_w2;
    j["fit_covariance"] = cov_kind_name(d.fit_cov);
    j["missingness"] = missingness_name(d.missingness);
    j["beta_star_grid"] = d.beta_star_grid;
    j["fix_surrogate_intercepts"] = d.fix_surrogate_intercepts;
    j["include_mle"] = d.include_mle;
    j["compute_sandwich"] = d.compute_sandwich;
    j["expected_route_subjects"] = d.expected_route_subjects;
    return j.dump(2) + "\n";
}

SimDesign sim_design_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw BadDesign(std::string("design file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw BadDesign("design file must hold a JSON object");

    static const std::vector<std::string> allowed = {
        "design",          "subjects",        "replicates",
        "seed",            "surrogates",      "occasions",
        "loading",         "latent_variance", "measurement_fraction",
        "intercept",       "beta_grid",       "rho_grid",
        "truth_covariance", "occasion_variances", "cs_sigma2",
        "cs_sigma_w2",     "fit_covariance",  "missingness",
        "beta_star_grid",  "fix_surrogate_intercepts", "include_mle",
        "compute_sandwich", "expected_route_subjects"};
    for (const auto& item : j.items())
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw BadDesign("unknown design key '" + item.key() + "'");
    if (!j.contains("design")) throw BadDesign("design file must name its 'design'");

    try {
        SimDesign d = default_design(design_kind_from_name(j.at("design").get<std::string>()));
        if (j.contains("subjects")) d.n_subjects = j.at("subjects").get<int>();
        if (j.contains("replicates")) d.replicates = j.at("replicates").get<int>();
        if (j.contains("seed")) d.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("surrogates")) d.p = j.at("surrogates").get<int>();
        if (j.contains("occasions")) d.n_occasions = j.at("occasions").get<int>();
        if (j.contains("loading")) d.loading = j.at("loading").get<double>();
        if (j.contains("latent_variance"))
            d.latent_variance = j.at("latent_variance").get<double>();
        if (j.contains("measurement_fraction"))
            d.me_fraction = j.at("measurement_fraction").get<double>();
        if (j.contains("intercept")) d.beta0 = j.at("intercept").get<double>();
        if (j.contains("beta_grid")) d.beta_grid = j.at("beta_grid").get<std::vector<double>>();
        if (j.contains("rho_grid")) d.rho_grid = j.at("rho_grid").get<std::vector<double>>();
        if (j.contains("truth_covariance"))
            d.truth_cov = cov_kind_from_name(j.at("truth_covariance").get<std::string>());
        if (j.contains("occasion_variances"))
            d.occasion_variances = j.at("occasion_variances").get<std::vector<double>>();
        if (j.contains("cs_sigma2")) d.cs_sigma2 = j.at("cs_sigma2").get<double>();
        if (j.contains("cs_sigma_w2")) d.cs_sigma_w2 = j.at("cs_sigma_w2").get<double>();
        if (j.contains("fit_covariance"))
            d.fit_cov = cov_kind_from_name(j.at("fit_covariance").get<std::string>());
        if (j.contains("missingness"))
            d.missingness = missingness_from_name(j.at("missingness").get<std::string>());
        if (j.contains("beta_star_grid"))
            d.beta_star_grid = j.at("beta_star_grid").get<std::vector<double>>();
        if (j.contains("fix_surrogate_intercepts"))
            d.fix_surrogate_intercepts = j.at("fix_surrogate_intercepts").get<bool>();
        if (j.contains("include_mle")) d.include_mle = j.at("include_mle").get<bool>();
        if (j.contains("compute_sandwich"))
            d.compute_sandwich = j.at("compute_sandwich").get<bool>();
        if (j.contains("expected_route_subjects"))
            d.expected_route_subjects = j.at("expected_route_subjects").get<int>();
        validate_design(d);
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw BadDesign(std::string("design value has the wrong type: ") + e.what());
    }
}

std::uint64_t fnv1a_hash(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t cell, std::uint64_t replicate) {
    std::uint64_t state = seed;
    (void)splitmix64(state);
    state ^= (cell + 1) * 0x9E3779B97F4A7C15ull;
    (void)splitmix64(state);
    state ^= (replicate + 1) * 0xD1B54A32D192ED03ull;
    return splitmix64(state);
}

double Rng::uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
}

Eigen::VectorXd Rng::normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal();
    return v;
}

ModelSpec sim_model_spec(const SimDesign& d) {
    validate_design(d);
    ModelSpec spec = make_blank_spec(d.p, 1, 0, 0);
    spec.latent_names = {"u"};
    spec.lambda[0][0] = Entry::fixed(d.loading);
    for (int j = 1; j < d.p; ++j) spec.lambda[j][0] = Entry::freed();
    // Location anchoring: the latent intercept is always estimated, so the
    // first surrogate intercept is pinned (all of them under the reduced
    // parameterization).
    spec.nu[0] = Entry::fixed(0.0);
    if (d.fix_surrogate_intercepts)
        for (int j = 0; j < d.p; ++j) spec.nu[j] = Entry::fixed(0.0);
    spec.outcome_latents = {0};
    spec.outcome_cov = d.fit_cov;
    return validate_spec(spec);
}

std::shared_ptr<const ParamLayout> sim_layout(const SimDesign& d) {
    return ParamLayout::build(sim_model_spec(d), d.n_occasions);
}

Eigen::VectorXd sim_truth_values(const SimDesign& d, double beta, double rho) {
    const auto layout = sim_layout(d);
    Eigen::VectorXd values = layout->neutral_values();
    values[0] = d.beta0;
    values[1] = beta;
    if (d.fit_cov == d.truth_cov)
        values.segment(layout->theta2_offset(), layout->theta2_count()) =
            truth_cov_params(d, rho);

    Theta3View v;
    v.nu = Eigen::VectorXd::Zero(d.p);
    v.lambda = Eigen::MatrixXd::Constant(d.p, 1, d.loading);
    v.k = Eigen::MatrixXd(d.p, 0);
    v.alpha = Eigen::VectorXd::Zero(1);
    v.gamma1 = Eigen::MatrixXd::Zero(1, 1);
    v.gamma2 = Eigen::MatrixXd(1, 0);
    v.delta_params = Eigen::VectorXd::Constant(d.p, measurement_error_variance(d));
    v.psi_params = Eigen::VectorXd::Constant(1, d.latent_variance);
    values.tail(layout->theta3_count()) = layout->flatten_theta3(v);
    return values;
}

double measurement_error_variance(const SimDesign& d) {
    const double signal = d.loading * d.loading * d.latent_variance;
    return d.me_fraction <= 0.0 ? 0.0 : d.me_fraction * signal / (1.0 - d.me_fraction);
}

double posterior_variance_first_k(const SimDesign& d, int k) {
    if (k < 0 || k > d.p) throw BadDesign("observed-count must lie in 0..p");
    const double sd2 = measurement_error_variance(d);
    const double psi = d.latent_variance, lam2 = d.loading * d.loading;
    if (k == 0) return psi;
    if (sd2 <= 0.0) return 0.0;
    return psi * sd2 / (sd2 + k * lam2 * psi);
}

Eigen::VectorXd pattern_probabilities(const SimDesign& d) {
    Eigen::VectorXd probs = Eigen::VectorXd::Zero(d.p);
    switch (d.missingness) {
        case Missingness::Complete:
            probs[d.p - 1] = 1.0;
            return probs;
        case Missingness::Uniform:
            probs.setConstant(1.0 / d.p);
            return probs;
        case Missingness::VarProportional: {
            for (int k = 1; k <= d.p; ++k) probs[k - 1] = posterior_variance_first_k(d, k);
            break;
        }
        case Missingness::VarInverse: {
            for (int k = 1; k <= d.p; ++k)
                probs[k - 1] = 1.0 / posterior_variance_first_k(d, k);
            break;
        }
    }
    return probs / probs.sum();
}

Dataset gen_dataset(const SimDesign& d, int beta_index, int rho_index, int replicate) {
    validate_design(d);
    if (beta_index < 0 || beta_index >= static_cast<int>(d.beta_grid.size()))
        throw BadDesign("beta index outside the design grid");
    const double beta = d.beta_grid[beta_index];
    const double rho = rho_at(d, d.rho_grid.empty() ? 0 : rho_index);

    const double sd2 = measurement_error_variance(d);
    const double sd_delta = std::sqrt(sd2);
    const double sd_u = std::sqrt(d.latent_variance);
    const Eigen::MatrixXd omega_eps =
        build_cov(CovStructure{d.truth_cov, d.n_occasions, {}}, truth_cov_params(d, rho),
                  /*with_derivs=*/false)
            .value;
    const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(omega_eps).matrixL();

    Eigen::VectorXd cumulative;
    if (d.missingness != Missingness::Complete) {
        const Eigen::VectorXd probs = pattern_probabilities(d);
        cumulative.resize(d.p);
        double acc = 0.0;
        for (int k = 0; k < d.p; ++k) {
            acc += probs[k];
            cumulative[k] = acc;
        }
        cumulative[d.p - 1] = 1.0;
    }

    const std::uint64_t cell =
        static_cast<std::uint64_t>(beta_index) * std::max<std::size_t>(1, d.rho_grid.size()) +
        static_cast<std::uint64_t>(d.rho_grid.empty() ? 0 : rho_index);
    Rng rng(derive_seed(d.seed, cell, static_cast<std::uint64_t>(replicate)));

    Dataset data;
    data.p = d.p;
    data.r = 0;
    data.q = 0;
    data.subjects.reserve(d.n_subjects);
    for (int i = 0; i < d.n_subjects; ++i) {
        SubjectData s;
        char id[16];
        std::snprintf(id, sizeof(id), "s%05d", i + 1);
        s.id = id;
        const double u = sd_u * rng.normal();
        s.u_true = Eigen::VectorXd::Constant(1, u);
        s.x.resize(d.p);
        for (int j = 0; j < d.p; ++j) s.x[j] = d.loading * u + sd_delta * rng.normal();
        const Eigen::VectorXd eps = chol * rng.normal_vector(d.n_occasions);
        s.y = Eigen::VectorXd::Constant(d.n_occasions, d.beta0 + beta * u) + eps;
        s.z = Eigen::MatrixXd(d.n_occasions, 0);
        s.w = Eigen::VectorXd(0);
        s.x_mask.assign(d.p, true);
        if (d.missingness != Missingness::Complete) {
            const double draw = rng.uniform();
            int observed = d.p;
            for (int k = 0; k < d.p; ++k) {
                if (draw <= cumulative[k]) {
                    observed = k + 1;
                    break;
                }
            }
            for (int j = observed; j < d.p; ++j) s.x_mask[j] = false;
        }
        data.subjects.push_back(std::move(s));
    }
    return data;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double variance_of(const std::vector<double>& v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return s / static_cast<double>(v.size() - 1);
}

double mc_se_mean(const std::vector<double>& v) {
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(variance_of(v) / static_cast<double>(v.size()));
}

double median_of(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double jackknife_se(const Eigen::MatrixXd& reps,
                    const std::function<double(const Eigen::MatrixXd&)>& stat) {
    const Eigen::Index r = reps.rows();
    if (r < 2) return std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd loo(r);
    Eigen::MatrixXd reduced(r - 1, reps.cols());
    for (Eigen::Index i = 0; i < r; ++i) {
        Eigen::Index at = 0;
        for (Eigen::Index k = 0; k < r; ++k)
            if (k != i) reduced.row(at++) = reps.row(k);
        loo[i] = stat(reduced);
    }
    const double mu = loo.mean();
    const double ss = (loo.array() - mu).square().sum();
    return std::sqrt(ss * static_cast<double>(r - 1) / static_cast<double>(r));
}

namespace {

// Shared per-cell replicate loop for the estimating-equation estimators and
// (optionally) joint maximum likelihood.
struct SchemeJob {
    std::string label;
    bool is_mle = false;
    std::optional<Scheme> scheme;  // set unless is_mle
    double beta_star = std::numeric_limits<double>::quiet_NaN();
};

SchemeJob mle_job() {
    SchemeJob j;
    j.label = "mle";
    j.is_mle = true;
    return j;
}

SchemeJob scheme_job(const std::string& label, const Scheme& scheme,
                     double beta_star = std::numeric_limits<double>::quiet_NaN()) {
    SchemeJob j;
    j.label = label;
    j.scheme = scheme;
    j.beta_star = beta_star;
    return j;
}

std::vector<std::vector<RepOutcome>> run_cell(const SimDesign& d,
                                              std::shared_ptr<const ParamLayout> layout,
                                              int beta_index, int rho_index,
                                              const std::vector<SchemeJob>& jobs) {
    std::vector<std::vector<RepOutcome>> results(jobs.size(),
                                                 std::vector<RepOutcome>(d.replicates));
    ExposureFitOptions exp_opts;
    exp_opts.check_identifiability = false;

    for (int rep = 0; rep < d.replicates; ++rep) {
        const Dataset data = gen_dataset(d, beta_index, rho_index, rep);

        std::optional<Eigen::VectorXd> theta3;
        const bool any_ee = std::any_of(jobs.begin(), jobs.end(),
                                        [](const SchemeJob& j) { return !j.is_mle; });
        if (any_ee) {
            try {
                theta3 = fit_exposure_mle(layout, data, nullptr, exp_opts).theta3;
            } catch (const Error&) {
                theta3.reset();
            }
        }

        for (std::size_t jix = 0; jix < jobs.size(); ++jix) {
            const SchemeJob& job = jobs[jix];
            RepOutcome& out = results[jix][rep];
            try {
                if (job.is_mle) {
                    JointFitOptions jopts;
                    jopts.compute_covariance = false;
                    jopts.check_identifiability = false;
                    const JointFit fit = fit_joint_mle(layout, data, jopts);
                    out.est = fit.values[1];
                    out.ok = true;
                } else {
                    if (!theta3) continue;  // exposure stage failed
                    const OutcomeFit fit = fit_outcome_ee(layout, data, *theta3, *job.scheme);
                    out.est = fit.theta1[1];
                    if (d.compute_sandwich) {
                        const SandwichVar sv =
                            sandwich_var(*layout, data, fit.full_values(), *job.scheme);
                        out.se = std::sqrt(std::max(0.0, sv.theta1(1, 1)));
                    }
                    out.ok = true;
                }
            } catch (const Error&) {
                out.ok = false;
            }
        }
    }
    return results;
}

}  // namespace

SimResult run_bias_experiment(const SimDesign& d) {
    validate_design(d);
    if (d.kind != DesignKind::Bias) throw BadDesign("expected a bias design");
    const auto layout = sim_layout(d);

    std::vector<SchemeJob> jobs;
    if (d.include_mle) jobs.push_back(mle_job());
    jobs.push_back(scheme_job("ee1", Scheme::ee1()));
    jobs.push_back(scheme_job("rc", Scheme::rc()));

    SimResult result;
    result.design = d;
    const int n_rho = std::max<std::size_t>(1, d.rho_grid.size());
    for (int bi = 0; bi < static_cast<int>(d.beta_grid.size()); ++bi) {
        for (int ri = 0; ri < n_rho; ++ri) {
            const auto reps = run_cell(d, layout, bi, ri, jobs);
            const double rho = d.rho_grid.empty()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : d.rho_grid[ri];
            for (std::size_t jix = 0; jix < jobs.size(); ++jix)
                result.cells.push_back(summarize(d, d.beta_grid[bi], rho, jobs[jix].label,
                                                 jobs[jix].beta_star, reps[jix]));
        }
    }
    return result;
}

SimResult run_efficiency_experiment(const SimDesign& d) {
    validate_design(d);
    if (d.kind != DesignKind::Efficiency) throw BadDesign("expected an efficiency design");
    const auto layout = sim_layout(d);

    std::vector<SchemeJob> jobs;
    jobs.push_back(mle_job());
    jobs.push_back(scheme_job("ee1", Scheme::ee1()));

    SimResult result;
    result.design = d;
    for (int bi = 0; bi < static_cast<int>(d.beta_grid.size()); ++bi) {
        const double beta = d.beta_grid[bi];
        const auto reps = run_cell(d, layout, bi, 0, jobs);
        SimCell mle_cell = summarize(d, beta, std::numeric_limits<double>::quiet_NaN(), "mle",
                                     std::numeric_limits<double>::quiet_NaN(), reps[0]);
        SimCell ee_cell = summarize(d, beta, std::numeric_limits<double>::quiet_NaN(), "ee1",
                                    std::numeric_limits<double>::quiet_NaN(), reps[1]);

        // Empirical route: Var(EE1)/Var(MLE) over replicates where both fits
        // succeeded, with a leave-one-out jackknife error.
        const Eigen::MatrixXd common = common_estimates({&reps[1], &reps[0]});
        if (common.rows() >= 2) {
            const auto ratio_stat = [](const Eigen::MatrixXd& m) {
                return column_variance(m, 0) / column_variance(m, 1);
            };
            ee_cell.eff_ratio_empirical = ratio_stat(common);
            ee_cell.eff_ratio_empirical_mc_se = jackknife_se(common, ratio_stat);
        }

        // Expected-information route at the generator truth on one large
        // sample: robust variance for the equations versus inverse observed
        // information for likelihood.
        SimDesign big = d;
        big.n_subjects = d.expected_route_subjects;
        const Dataset big_data = gen_dataset(big, bi, 0, d.replicates);
        const Eigen::VectorXd truth = sim_truth_values(d, beta, 0.0);
        const SandwichVar sv = sandwich_var(*layout, big_data, truth, Scheme::ee1());
        const Eigen::MatrixXd hess = fd_hessian(
            [&](const Eigen::VectorXd& v) { return -joint_loglik(*layout, v, big_data); },
            truth, 1e-4);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(hess);
        if (lu.isInvertible()) {
            const double mle_var = lu.inverse()(1, 1);
            if (mle_var > 0.0) ee_cell.eff_ratio_expected = sv.theta1(1, 1) / mle_var;
        }

        result.cells.push_back(std::move(mle_cell));
        result.cells.push_back(std::move(ee_cell));
    }
    return result;
}

SimResult run_varratio_experiment(const SimDesign& d) {
    validate_design(d);
    if (d.kind != DesignKind::VarRatio) throw BadDesign("expected a variance-ratio design");
    const auto layout = sim_layout(d);

    SimResult result;
    result.design = d;
    for (int bi = 0; bi < static_cast<int>(d.beta_grid.size()); ++bi) {
        const double beta = d.beta_grid[bi];

        std::vector<SchemeJob> jobs;
        jobs.push_back(scheme_job("ee1", Scheme::ee1()));
        jobs.push_back(scheme_job("rc", Scheme::rc()));
        for (double bs : d.beta_star_grid)
            jobs.push_back(scheme_job("ee2", Scheme::ee2(Eigen::VectorXd::Constant(1, bs)), bs));

        const auto reps = run_cell(d, layout, bi, 0, jobs);

        // Index of the grid entry matching the true coefficient (if any), for
        // the gain-versus-truth contrast.
        int truth_star = -1;
        for (std::size_t g = 0; g < d.beta_star_grid.size(); ++g)
            if (std::abs(d.beta_star_grid[g] - beta) < 1e-12)
                truth_star = static_cast<int>(g) + 2;  // offset past ee1, rc

        const auto ratio_stat = [](const Eigen::MatrixXd& m) {
            return column_variance(m, 0) / column_variance(m, 1);
        };
        for (std::size_t jix = 0; jix < jobs.size(); ++jix) {
            SimCell cell = summarize(d, beta, std::numeric_limits<double>::quiet_NaN(),
                                     jobs[jix].label, jobs[jix].beta_star, reps[jix]);
            if (jix == 0) {
                cell.var_ratio_vs_ee1 = 1.0;
                cell.var_ratio_mc_se = 0.0;
            } else {
                const Eigen::MatrixXd common = common_estimates({&reps[jix], &reps[0]});
                if (common.rows() >= 2) {
                    cell.var_ratio_vs_ee1 = ratio_stat(common);
                    cell.var_ratio_mc_se = jackknife_se(common, ratio_stat);
                }
                if (truth_star >= 0 && static_cast<int>(jix) != truth_star &&
                    !jobs[jix].is_mle) {
                    const Eigen::MatrixXd trio = common_estimates(
                        {&reps[jix], &reps[static_cast<std::size_t>(truth_star)], &reps[0]});
                    if (trio.rows() >= 2) {
                        const auto diff_stat = [](const Eigen::MatrixXd& m) {
                            const double base = column_variance(m, 2);
                            return column_variance(m, 0) / base -
                                   column_variance(m, 1) / base;
                        };
                        cell.ratio_minus_truth_star = diff_stat(trio);
                        cell.ratio_minus_truth_star_mc_se = jackknife_se(trio, diff_stat);
                    }
                }
            }
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

SimResult run_experiment(const SimDesign& d) {
    switch (d.kind) {
        case DesignKind::Bias:
            return run_bias_experiment(d);
        case DesignKind::Efficiency:
            return run_efficiency_experiment(d);
        case DesignKind::VarRatio:
            return run_varratio_experiment(d);
    }
    throw BadDesign("unknown design kind");
}

std::vector<std::string> sim_csv_header() {
    return {"design",
            "beta_true",
            "rho",
            "scheme",
            "beta_star",
            "fit_structure",
            "replicates_ok",
            "replicates_failed",
            "mean_estimate",
            "bias",
            "bias_mc_se",
            "empirical_variance",
            "empirical_mse",
            "mean_sandwich_se",
            "median_sandwich_se",
            "ci95_coverage",
            "var_ratio_vs_ee1",
            "var_ratio_mc_se",
            "ratio_minus_truth_star",
            "ratio_minus_truth_star_mc_se",
            "eff_ratio_empirical",
            "eff_ratio_empirical_mc_se",
            "eff_ratio_expected"};
}

std::vector<std::vector<std::string>> sim_csv_rows(const SimResult& result) {
    std::vector<std::vector<std::string>> rows;
    rows.reserve(result.cells.size());
    for (const SimCell& c : result.cells) {
        rows.push_back({c.design,
                        format_double(c.beta_true),
                        format_double(c.rho),
                        c.scheme,
                        format_double(c.beta_star),
                        c.fit_structure,
                        std::to_string(c.replicates_ok),
                        std::to_string(c.replicates_failed),
                        format_double(c.mean_estimate),
                        format_double(c.bias),
                        format_double(c.bias_mc_se),
                        format_double(c.empirical_variance),
                        format_double(c.empirical_mse),
                        format_double(c.mean_sandwich_se),
                        format_double(c.median_sandwich_se),
                        format_double(c.ci95_coverage),
                        format_double(c.var_ratio_vs_ee1),
                        format_double(c.var_ratio_mc_se),
                        format_double(c.ratio_minus_truth_star),
                        format_double(c.ratio_minus_truth_star_mc_se),
                        format_double(c.eff_ratio_empirical),
                        format_double(c.eff_ratio_empirical_mc_se),
                        format_double(c.eff_ratio_expected)});
    }
    return rows;
}

}  // namespace lexee
