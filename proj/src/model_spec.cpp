#include "lexee/model_spec.hpp"

#include <algorithm>
#include <set>

#include "lexee/errors.hpp"

namespace lexee {

ModelSpec make_blank_spec(int p, int l, int r, int q) {
    ModelSpec spec;
    for (int j = 0; j < p; ++j) spec.surrogate_names.push_back("x" + std::to_string(j + 1));
    for (int c = 0; c < l; ++c) spec.latent_names.push_back("u" + std::to_string(c + 1));
    for (int s = 0; s < r; ++s) spec.w_names.push_back("w" + std::to_string(s + 1));
    for (int s = 0; s < q; ++s) spec.z_names.push_back("z" + std::to_string(s + 1));
    spec.nu.assign(p, Entry::freed());
    spec.lambda.assign(p, std::vector<Entry>(l, Entry::fixed(0.0)));
    spec.k.assign(p, std::vector<Entry>(r, Entry::fixed(0.0)));
    spec.gamma1.assign(l, std::vector<Entry>(l, Entry::fixed(0.0)));
    spec.gamma2.assign(l, std::vector<Entry>(r, Entry::fixed(0.0)));
    spec.delta.variances.assign(p, Entry::freed());
    return spec;
}

namespace {

void check_grid(const Grid<Entry>& g, int rows, int cols, const std::string& name,
                std::vector<std::string>& bad) {
    if (static_cast<int>(g.size()) != rows) {
        bad.push_back(name + " has " + std::to_string(g.size()) + " rows, expected " +
                      std::to_string(rows));
        return;
    }
    for (const auto& row : g) {
        if (static_cast<int>(row.size()) != cols) {
            bad.push_back(name + " row width " + std::to_string(row.size()) + ", expected " +
                          std::to_string(cols));
            return;
        }
    }
}

}  // namespace

const ModelSpec& validate_spec(const ModelSpec& spec) {
    std::vector<std::string> bad;
    const int p = spec.p(), l = spec.l(), r = spec.r();

    if (p < 1) bad.push_back("at least one surrogate is required");
    if (l < 1) bad.push_back("at least one latent exposure is required");

    if (static_cast<int>(spec.nu.size()) != p)
        bad.push_back("nu has " + std::to_string(spec.nu.size()) + " entries, expected " +
                      std::to_string(p));
    check_grid(spec.lambda, p, l, "lambda", bad);
    check_grid(spec.k, p, r, "k", bad);
    check_grid(spec.gamma1, l, l, "gamma1", bad);
    check_grid(spec.gamma2, l, r, "gamma2", bad);

    if (static_cast<int>(spec.lambda.size()) == p && p > 0 &&
        static_cast<int>(spec.lambda[0].size()) == l) {
        for (int c = 0; c < l; ++c) {
            bool anchored = false;
            for (int j = 0; j < p; ++j) {
                const Entry& e = spec.lambda[j][c];
                if (!e.free && e.value != 0.0) anchored = true;
            }
            if (!anchored) {
                bad.push_back("latent '" + spec.latent_names[c] +
                              "' has no scale anchor: fix one loading to a non-zero constant");
            }
        }
    }

    if (static_cast<int>(spec.gamma1.size()) == l) {
        for (int c = 0; c < l; ++c) {
            if (static_cast<int>(spec.gamma1[c].size()) != l) continue;
            const Entry& d = spec.gamma1[c][c];
            if (d.free || d.value != 0.0) {
                bad.push_back("gamma1 diagonal entry for latent '" + spec.latent_names[c] +
                              "' must be fixed at 0");
            }
        }
    }

    if (static_cast<int>(spec.delta.variances.size()) != p) {
        bad.push_back("delta variances have " + std::to_string(spec.delta.variances.size()) +
                      " entries, expected " + std::to_string(p));
    } else {
        for (int j = 0; j < p; ++j) {
            const Entry& e = spec.delta.variances[j];
            if (!e.free && e.value < 0.0) {
                bad.push_back("fixed measurement-error variance for '" +
                              spec.surrogate_names[j] + "' is negative");
            }
        }
    }

    std::set<int> seen;
    for (const auto& block : spec.delta.ar1_blocks) {
        if (block.size() < 2) {
            bad.push_back("a measurement-error AR(1) block needs at least two surrogates");
            continue;
        }
        for (int j : block) {
            if (j < 0 || j >= p) {
                bad.push_back("measurement-error AR(1) block index " + std::to_string(j) +
                              " is out of range");
            } else if (!seen.insert(j).second) {
                bad.push_back("surrogate '" + spec.surrogate_names[j] +
                              "' appears in more than one AR(1) block");
            }
        }
    }

    if (spec.outcome_latents.empty()) {
        bad.push_back("the outcome must load on at least one latent exposure");
    }
    std::set<int> chosen;
    for (int c : spec.outcome_latents) {
        if (c < 0 || c >= l) {
            bad.push_back("outcome latent index " + std::to_string(c) + " is out of range");
        } else if (!chosen.insert(c).second) {
            bad.push_back("outcome latent '" + spec.latent_names[c] + "' is listed twice");
        }
    }

    switch (spec.outcome_cov) {
        case CovKind::Independence:
        case CovKind::CS:
        case CovKind::CSH:
        case CovKind::AR1:
        case CovKind::HAR1:
        case CovKind::Unstructured:
            break;
        default:
            bad.push_back("'" + cov_kind_name(spec.outcome_cov) +
                          "' is not an outcome covariance family");
    }

    if (!bad.empty()) throw SpecError(std::move(bad));
    return spec;
}

}  // namespace lexee
