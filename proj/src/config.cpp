#include "lexee/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "lexee/errors.hpp"

namespace lexee {

namespace {

using ordered_json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& source, const std::string& reason) {
    throw ParseError(source, -1, -1, reason);
}

void check_keys(const ordered_json& obj, const std::vector<std::string>& allowed,
                const std::string& source, const std::string& where) {
    for (const auto& item : obj.items())
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            fail(source, "unknown key '" + item.key() + "' in " + where);
}

Entry entry_from_json(const ordered_json& v, const std::string& source,
                      const std::string& where) {
    if (v.is_string()) {
        if (v.get<std::string>() == "free") return Entry::freed();
        fail(source, where + ": expected a number or \"free\", got '" + v.get<std::string>() +
                         "'");
    }
    if (v.is_number()) return Entry::fixed(v.get<double>());
    fail(source, where + ": expected a number or \"free\"");
}

ordered_json entry_to_json(const Entry& e) {
    if (e.free) return "free";
    return e.value;
}

std::vector<std::string> name_list(const ordered_json& v, const std::string& source,
                                   const std::string& where) {
    if (!v.is_array()) fail(source, where + " must be an array of names");
    std::vector<std::string> names;
    for (const auto& item : v) {
        if (!item.is_string()) fail(source, where + " must contain only strings");
        names.push_back(item.get<std::string>());
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t j = i + 1; j < names.size(); ++j)
            if (names[i] == names[j])
                fail(source, where + " lists '" + names[i] + "' twice");
    return names;
}

int index_of(const std::vector<std::string>& names, const std::string& name,
             const std::string& source, const std::string& where) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) fail(source, where + ": unknown name '" + name + "'");
    return static_cast<int>(it - names.begin());
}

// Fills one row of a coefficient grid from an object of name -> entry.
void fill_row(std::vector<Entry>& row, const ordered_json& obj,
              const std::vector<std::string>& names, const std::string& source,
              const std::string& where) {
    if (!obj.is_object()) fail(source, where + " must be an object");
    for (const auto& item : obj.items()) {
        const int idx = index_of(names, item.key(), source, where);
        row[static_cast<std::size_t>(idx)] =
            entry_from_json(item.value(), source, where + "." + item.key());
    }
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::Mle:
            return "mle";
        case Method::Ee1:
            return "ee1";
        case Method::Ee2:
            return "ee2";
        case Method::Rc:
            return "rc";
    }
    throw BadParam("unknown method");
}

Method method_from_name(const std::string& name) {
    if (name == "mle") return Method::Mle;
    if (name == "ee1") return Method::Ee1;
    if (name == "ee2") return Method::Ee2;
    if (name == "rc") return Method::Rc;
    throw BadParam("unknown method '" + name + "' (expected mle, ee1, ee2 or rc)");
}

ModelConfig config_from_json(const std::string& text, const std::string& source_label) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(source_label, std::string("not valid JSON: ") + e.what());
    }
    if (!j.is_object()) fail(source_label, "top level must be a JSON object");
    check_keys(j,
               {"latents", "surrogates", "subject_covariates", "occasion_covariates",
                "latent_regressions", "error_correlation_blocks", "latent_covariance",
                "outcome", "defaults"},
               source_label, "the top-level object");
    for (const char* key : {"latents", "surrogates", "outcome"})
        if (!j.contains(key))
            fail(source_label, std::string("missing required key '") + key + "'");

    ModelConfig config;
    ModelSpec& spec = config.spec;
    spec.latent_names = name_list(j.at("latents"), source_label, "latents");
    if (j.contains("subject_covariates"))
        spec.w_names = name_list(j.at("subject_covariates"), source_label, "subject_covariates");
    if (j.contains("occasion_covariates"))
        spec.z_names =
            name_list(j.at("occasion_covariates"), source_label, "occasion_covariates");

    const int l = spec.l();
    const int r = spec.r();

    if (!j.at("surrogates").is_array() || j.at("surrogates").empty())
        fail(source_label, "surrogates must be a non-empty array");
    for (const auto& s : j.at("surrogates")) {
        if (!s.is_object()) fail(source_label, "each surrogate must be an object");
        check_keys(s, {"name", "loadings", "intercept", "item_bias", "error_variance"},
                   source_label, "a surrogate entry");
        if (!s.contains("name") || !s.at("name").is_string())
            fail(source_label, "each surrogate needs a string 'name'");
        const std::string name = s.at("name").get<std::string>();
        const std::string where = "surrogate '" + name + "'";
        if (std::find(spec.surrogate_names.begin(), spec.surrogate_names.end(), name) !=
            spec.surrogate_names.end())
            fail(source_label, where + " is declared twice");
        spec.surrogate_names.push_back(name);

        std::vector<Entry> loadings(static_cast<std::size_t>(l), Entry::fixed(0.0));
        if (!s.contains("loadings"))
            fail(source_label, where + " needs a 'loadings' object");
        fill_row(loadings, s.at("loadings"), spec.latent_names, source_label,
                 where + ".loadings");
        spec.lambda.push_back(std::move(loadings));

        spec.nu.push_back(s.contains("intercept")
                              ? entry_from_json(s.at("intercept"), source_label,
                                                where + ".intercept")
                              : Entry::freed());

        std::vector<Entry> bias(static_cast<std::size_t>(r), Entry::fixed(0.0));
        if (s.contains("item_bias"))
            fill_row(bias, s.at("item_bias"), spec.w_names, source_label, where + ".item_bias");
        spec.k.push_back(std::move(bias));

        spec.delta.variances.push_back(
            s.contains("error_variance")
                ? entry_from_json(s.at("error_variance"), source_label,
                                  where + ".error_variance")
                : Entry::freed());
    }

    spec.gamma1.assign(static_cast<std::size_t>(l),
                       std::vector<Entry>(static_cast<std::size_t>(l), Entry::fixed(0.0)));
    spec.gamma2.assign(static_cast<std::size_t>(l),
                       std::vector<Entry>(static_cast<std::size_t>(r), Entry::fixed(0.0)));
    if (j.contains("latent_regressions")) {
        if (!j.at("latent_regressions").is_array())
            fail(source_label, "latent_regressions must be an array");
        std::vector<bool> seen(static_cast<std::size_t>(l), false);
        for (const auto& reg : j.at("latent_regressions")) {
            if (!reg.is_object()) fail(source_label, "each latent regression must be an object");
            check_keys(reg, {"target", "on_latents", "on_covariates"}, source_label,
                       "a latent regression");
            if (!reg.contains("target") || !reg.at("target").is_string())
                fail(source_label, "each latent regression needs a string 'target'");
            const std::string target = reg.at("target").get<std::string>();
            const int t =
                index_of(spec.latent_names, target, source_label, "latent_regressions.target");
            if (seen[static_cast<std::size_t>(t)])
                fail(source_label, "latent '" + target + "' has two regression blocks");
            seen[static_cast<std::size_t>(t)] = true;
            const std::string where = "regression for '" + target + "'";
            if (reg.contains("on_latents"))
                fill_row(spec.gamma1[static_cast<std::size_t>(t)], reg.at("on_latents"),
                         spec.latent_names, source_label, where + ".on_latents");
            if (reg.contains("on_covariates"))
                fill_row(spec.gamma2[static_cast<std::size_t>(t)], reg.at("on_covariates"),
                         spec.w_names, source_label, where + ".on_covariates");
        }
    }

    if (j.contains("error_correlation_blocks")) {
        if (!j.at("error_correlation_blocks").is_array())
            fail(source_label, "error_correlation_blocks must be an array of name arrays");
        for (const auto& block : j.at("error_correlation_blocks")) {
            const std::vector<std::string> names =
                name_list(block, source_label, "an error_correlation_block");
            std::vector<int> indices;
            for (const auto& n : names)
                indices.push_back(index_of(spec.surrogate_names, n, source_label,
                                           "error_correlation_blocks"));
            spec.delta.ar1_blocks.push_back(std::move(indices));
        }
    }

    if (j.contains("latent_covariance")) {
        const ordered_json& lc = j.at("latent_covariance");
        if (!lc.is_string()) fail(source_label, "latent_covariance must be a string");
        const std::string kind = lc.get<std::string>();
        if (kind == "unstructured")
            spec.psi = PsiKind::Unstructured;
        else if (kind == "diagonal")
            spec.psi = PsiKind::Diagonal;
        else
            fail(source_label,
                 "latent_covariance must be 'unstructured' or 'diagonal', got '" + kind + "'");
    }

    const ordered_json& outcome = j.at("outcome");
    if (!outcome.is_object()) fail(source_label, "outcome must be an object");
    check_keys(outcome, {"name", "latents", "covariance"}, source_label, "outcome");
    if (outcome.contains("name")) {
        if (!outcome.at("name").is_string()) fail(source_label, "outcome.name must be a string");
        spec.outcome_name = outcome.at("name").get<std::string>();
    }
    if (!outcome.contains("latents"))
        fail(source_label, "outcome needs a 'latents' list");
    for (const auto& name :
         name_list(outcome.at("latents"), source_label, "outcome.latents"))
        spec.outcome_latents.push_back(
            index_of(spec.latent_names, name, source_label, "outcome.latents"));
    if (!outcome.contains("covariance") || !outcome.at("covariance").is_string())
        fail(source_label, "outcome needs a string 'covariance' family");
    try {
        spec.outcome_cov = cov_kind_from_name(outcome.at("covariance").get<std::string>());
    } catch (const BadParam& e) {
        fail(source_label, e.what());
    }

    if (j.contains("defaults")) {
        const ordered_json& defaults = j.at("defaults");
        if (!defaults.is_object()) fail(source_label, "defaults must be an object");
        check_keys(defaults, {"method", "beta_star"}, source_label, "defaults");
        if (defaults.contains("method")) {
            if (!defaults.at("method").is_string())
                fail(source_label, "defaults.method must be a string");
            try {
                config.default_method =
                    method_from_name(defaults.at("method").get<std::string>());
            } catch (const BadParam& e) {
                fail(source_label, e.what());
            }
        }
        if (defaults.contains("beta_star")) {
            if (!defaults.at("beta_star").is_array())
                fail(source_label, "defaults.beta_star must be an array of numbers");
            for (const auto& v : defaults.at("beta_star")) {
                if (!v.is_number()) fail(source_label, "defaults.beta_star must hold numbers");
                config.default_beta_star.push_back(v.get<double>());
            }
        }
    }

    try {
        validate_spec(spec);
    } catch (const SpecError& e) {
        fail(source_label, e.what());
    }
    return config;
}

ModelConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path, -1, -1, "cannot open file");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return config_from_json(buffer.str(), path);
}

std::string config_json(const ModelConfig& config) {
    const ModelSpec& spec = config.spec;
    ordered_json j;
    j["latents"] = spec.latent_names;

    ordered_json surrogates = ordered_json::array();
    for (int i = 0; i < spec.p(); ++i) {
        ordered_json s;
        s["name"] = spec.surrogate_names[static_cast<std::size_t>(i)];
        ordered_json loadings = ordered_json::object();
        for (int c = 0; c < spec.l(); ++c) {
            const Entry& e = spec.lambda[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            if (e.free || e.value != 0.0)
                loadings[spec.latent_names[static_cast<std::size_t>(c)]] = entry_to_json(e);
        }
        s["loadings"] = loadings;
        s["intercept"] = entry_to_json(spec.nu[static_cast<std::size_t>(i)]);
        ordered_json bias = ordered_json::object();
        for (int c = 0; c < spec.r(); ++c) {
            const Entry& e = spec.k[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
            if (e.free || e.value != 0.0)
                bias[spec.w_names[static_cast<std::size_t>(c)]] = entry_to_json(e);
        }
        if (!bias.empty()) s["item_bias"] = bias;
        s["error_variance"] = entry_to_json(spec.delta.variances[static_cast<std::size_t>(i)]);
        surrogates.push_back(std::move(s));
    }
    j["surrogates"] = surrogates;

    if (!spec.w_names.empty()) j["subject_covariates"] = spec.w_names;
    if (!spec.z_names.empty()) j["occasion_covariates"] = spec.z_names;

    ordered_json regressions = ordered_json::array();
    for (int t = 0; t < spec.l(); ++t) {
        ordered_json on_latents = ordered_json::object();
        for (int c = 0; c < spec.l(); ++c) {
            const Entry& e =
                spec.gamma1[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
            if (e.free || e.value != 0.0)
                on_latents[spec.latent_names[static_cast<std::size_t>(c)]] = entry_to_json(e);
        }
        ordered_json on_covariates = ordered_json::object();
        for (int c = 0; c < spec.r(); ++c) {
            const Entry& e =
                spec.gamma2[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)];
            if (e.free || e.value != 0.0)
                on_covariates[spec.w_names[static_cast<std::size_t>(c)]] = entry_to_json(e);
        }
        if (on_latents.empty() && on_covariates.empty()) continue;
        ordered_json reg;
        reg["target"] = spec.latent_names[static_cast<std::size_t>(t)];
        if (!on_latents.empty()) reg["on_latents"] = on_latents;
        if (!on_covariates.empty()) reg["on_covariates"] = on_covariates;
        regressions.push_back(std::move(reg));
    }
    if (!regressions.empty()) j["latent_regressions"] = regressions;

    if (!spec.delta.ar1_blocks.empty()) {
        ordered_json blocks = ordered_json::array();
        for (const auto& block : spec.delta.ar1_blocks) {
            ordered_json names = ordered_json::array();
            for (int idx : block)
                names.push_back(spec.surrogate_names[static_cast<std::size_t>(idx)]);
            blocks.push_back(std::move(names));
        }
        j["error_correlation_blocks"] = blocks;
    }

    j["latent_covariance"] =
        spec.psi == PsiKind::Unstructured ? "unstructured" : "diagonal";

    ordered_json outcome;
    outcome["name"] = spec.outcome_name;
    ordered_json outcome_latents = ordered_json::array();
    for (int c : spec.outcome_latents)
        outcome_latents.push_back(spec.latent_names[static_cast<std::size_t>(c)]);
    outcome["latents"] = outcome_latents;
    outcome["covariance"] = cov_kind_name(spec.outcome_cov);
    j["outcome"] = outcome;

    ordered_json defaults;
    defaults["method"] = method_name(config.default_method);
    if (!config.default_beta_star.empty()) defaults["beta_star"] = config.default_beta_star;
    j["defaults"] = defaults;

    return j.dump(2) + "\n";
}

}  // namespace lexee
