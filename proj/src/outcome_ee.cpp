#include "lexee/outcome_ee.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <utility>

#include "lexee/covariance.hpp"
#include "lexee/errors.hpp"
#include "lexee/exposure_fit.hpp"
#include "lexee/optim.hpp"

namespace lexee {

namespace {

bool is_linear_family(CovKind kind) {
    switch (kind) {
        case CovKind::Independence:
        case CovKind::CS:
        case CovKind::CSH:
        case CovKind::Unstructured:
            return true;
        default:
            return false;
    }
}

Eigen::VectorXd scheme_weight_beta(const Scheme& scheme, const Theta1View& theta1,
                                   const std::vector<int>& outcome_latents, int l) {
    switch (scheme.kind) {
        case SchemeKind::EE1:
            return theta1.beta_full;
        case SchemeKind::EE2: {
            if (scheme.beta_star.size() != static_cast<Eigen::Index>(outcome_latents.size()))
                throw BadParam("fixed-weight coefficient vector must have one entry per outcome "
                               "latent");
            Eigen::VectorXd b = Eigen::VectorXd::Zero(l);
            for (std::size_t i = 0; i < outcome_latents.size(); ++i)
                b[outcome_latents[i]] = scheme.beta_star[i];
            return b;
        }
        case SchemeKind::RC:
            return Eigen::VectorXd::Zero(l);
    }
    throw BadParam("unknown weighting scheme");
}

Eigen::MatrixXd design_for(const ModelSpec& spec, const EbScores& eb, const SubjectData& s) {
    const int n = s.n_occasions();
    const int nsel = static_cast<int>(spec.outcome_latents.size());
    const int q = spec.q();
    Eigen::MatrixXd x(n, 1 + nsel + q);
    x.col(0).setOnes();
    for (int k = 0; k < nsel; ++k)
        x.col(1 + k).setConstant(eb.u_tilde[spec.outcome_latents[k]]);
    if (q > 0) x.rightCols(q) = s.z;
    return x;
}

Eigen::LLT<Eigen::MatrixXd> factor_or_throw(const Eigen::MatrixXd& r) {
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success)
        throw Singular("working outcome covariance is not positive definite");
    return llt;
}

// Per-subject stacked mean + covariance estimating-function contributions at
// a single parameter point (weights and model covariance both evaluated
// there). Zero for subjects with no outcome occasions.
Eigen::VectorXd subject_outcome_contrib(const ParamLayout& layout, const Scheme& scheme,
                                        const Theta1View& t1, const CovMatrices& epsm,
                                        const EbScores& eb, const SubjectData& s) {
    const ModelSpec& spec = layout.spec();
    const int k1 = layout.theta1_count(), k2 = layout.theta2_count();
    Eigen::VectorXd out = Eigen::VectorXd::Zero(k1 + k2);
    const int n = s.n_occasions();
    if (n == 0) return out;

    const Eigen::MatrixXd x = design_for(spec, eb, s);
    const Eigen::VectorXd theta1_flat = layout.flatten_theta1(t1);
    const Eigen::VectorXd e = s.y - x * theta1_flat;

    const Eigen::MatrixXd r =
        working_cov(scheme, t1, epsm.value, eb.psi_tilde, spec.outcome_latents, n);
    const auto llt = factor_or_throw(r);
    const Eigen::VectorXd rinv_e = llt.solve(e);

    out.head(k1) = x.transpose() * rinv_e;

    // Covariance trace equations against the model-implied conditional
    // covariance Omega_eps + (beta' Psi_tilde beta) 11'.
    const double c_model = t1.beta_full.dot(eb.psi_tilde * t1.beta_full);
    Eigen::MatrixXd bracket = e * e.transpose() - epsm.value.topLeftCorner(n, n);
    bracket.array() -= c_model;
    const Eigen::MatrixXd rinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd core = rinv * bracket * rinv;
    for (int k = 0; k < k2; ++k)
        out[k1 + k] = 0.5 * (epsm.derivs[k].topLeftCorner(n, n).array() * core.array()).sum();
    return out;
}

struct MomentInit {
    Eigen::VectorXd theta2;
};

// Residual-moment starting values for the covariance parameters.
MomentInit moment_start(const ParamLayout& layout, const EEWorkspace& w,
                        const Eigen::VectorXd& theta1) {
    const CovStructure s = layout.outcome_structure();
    const int n_max = s.dim;
    const Theta1View t1 = layout.theta1_view(theta1);
    const Eigen::VectorXd theta1_flat = layout.flatten_theta1(t1);

    double sum_sq = 0.0;
    long count = 0;
    Eigen::VectorXd occ_sq = Eigen::VectorXd::Zero(n_max);
    Eigen::VectorXd occ_n = Eigen::VectorXd::Zero(n_max);
    double lag_num = 0.0, lag_den = 0.0;
    for (std::size_t i = 0; i < w.data->subjects.size(); ++i) {
        const SubjectData& sub = w.data->subjects[i];
        const int n = sub.n_occasions();
        if (n == 0) continue;
        const Eigen::VectorXd e = sub.y - w.design[i] * theta1_flat;
        sum_sq += e.squaredNorm();
        count += n;
        for (int j = 0; j < n; ++j) {
            occ_sq[j] += e[j] * e[j];
            occ_n[j] += 1.0;
        }
        for (int j = 0; j + 1 < n; ++j) {
            lag_num += e[j] * e[j + 1];
            lag_den += 0.5 * (e[j] * e[j] + e[j + 1] * e[j + 1]);
        }
    }
    const double s2 = count > 0 ? std::max(1e-6, sum_sq / static_cast<double>(count)) : 1.0;
    Eigen::VectorXd occ_var(n_max);
    for (int j = 0; j < n_max; ++j)
        occ_var[j] = occ_n[j] > 0 ? std::max(1e-6, occ_sq[j] / occ_n[j]) : s2;
    double rho = lag_den > 0 ? lag_num / lag_den : 0.0;
    rho = std::clamp(rho, -0.9, 0.9);

    MomentInit init;
    switch (s.kind) {
        case CovKind::Independence:
            init.theta2 = Eigen::VectorXd::Constant(1, s2);
            break;
        case CovKind::CS:
            init.theta2 = (Eigen::VectorXd(2) << 0.75 * s2, 0.25 * s2).finished();
            break;
        case CovKind::CSH:
            init.theta2.resize(n_max + 1);
            init.theta2.head(n_max) = 0.75 * occ_var;
            init.theta2[n_max] = 0.25 * s2;
            break;
        case CovKind::AR1:
            init.theta2 = (Eigen::VectorXd(2) << s2, rho).finished();
            break;
        case CovKind::HAR1:
            init.theta2.resize(n_max + 1);
            init.theta2.head(n_max) = occ_var;
            init.theta2[n_max] = rho;
            break;
        case CovKind::Unstructured: {
            init.theta2 = Eigen::VectorXd::Zero(n_max * (n_max + 1) / 2);
            int idx = 0;
            for (int a = 0; a < n_max; ++a)
                for (int b = 0; b <= a; ++b) init.theta2[idx++] = (a == b) ? s2 : 0.0;
            break;
        }
        default:
            throw BadParam("unsupported outcome covariance family");
    }
    return init;
}

std::vector<std::string> theta1_names(const ParamLayout& layout) {
    std::vector<std::string> names;
    names.reserve(layout.theta1_count());
    for (int i = 0; i < layout.theta1_count(); ++i) names.push_back(layout.name(i));
    return names;
}

}  // namespace

std::string scheme_name(const Scheme& s) {
    switch (s.kind) {
        case SchemeKind::EE1:
            return "ee1";
        case SchemeKind::EE2:
            return "ee2";
        case SchemeKind::RC:
            return "rc";
    }
    return "unknown";
}

Eigen::MatrixXd working_cov(const Scheme& scheme, const Theta1View& theta1,
                            const Eigen::MatrixXd& omega_eps_full,
                            const Eigen::MatrixXd& psi_tilde,
                            const std::vector<int>& outcome_latents, int n_i) {
    Eigen::MatrixXd r = omega_eps_full.topLeftCorner(n_i, n_i);
    if (scheme.kind != SchemeKind::RC) {
        const Eigen::VectorXd b = scheme_weight_beta(scheme, theta1, outcome_latents,
                                                     static_cast<int>(psi_tilde.rows()));
        const double c = b.dot(psi_tilde * b);
        if (c != 0.0) r.array() += c;
    }
    return r;
}

EEWorkspace make_ee_workspace(std::shared_ptr<const ParamLayout> layout, const Dataset& data,
                              const Eigen::VectorXd& theta3) {
    EEWorkspace w;
    w.layout = layout;
    w.data = &data;
    const Eigen::VectorXd full = embed_theta3(*layout, theta3);
    const Theta3View t3 = layout->theta3_view(full);
    MomentContext ctx(layout->spec(), t3);
    w.eb.reserve(data.subjects.size());
    w.design.reserve(data.subjects.size());
    for (const SubjectData& s : data.subjects) {
        w.eb.push_back(ctx.eb(s.x, s.x_mask, s.w));
        w.design.push_back(design_for(layout->spec(), w.eb.back(), s));
    }
    return w;
}

Eigen::VectorXd solve_theta1(const EEWorkspace& w, const Scheme& scheme,
                             const Theta1View& weight_beta, const Eigen::VectorXd& theta2) {
    const ParamLayout& layout = *w.layout;
    const ModelSpec& spec = layout.spec();
    const int k1 = layout.theta1_count();
    const CovMatrices epsm = build_cov(layout.outcome_structure(), theta2, /*with_derivs=*/false);

    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(k1, k1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k1);
    for (std::size_t i = 0; i < w.data->subjects.size(); ++i) {
        const SubjectData& s = w.data->subjects[i];
        const int n = s.n_occasions();
        if (n == 0) continue;
        const Eigen::MatrixXd r =
            working_cov(scheme, weight_beta, epsm.value, w.eb[i].psi_tilde, spec.outcome_latents,
                        n);
        const auto llt = factor_or_throw(r);
        const Eigen::MatrixXd rinv_x = llt.solve(w.design[i]);
        m.noalias() += w.design[i].transpose() * rinv_x;
        rhs.noalias() += rinv_x.transpose() * s.y;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
    if (emax <= 0.0 || es.eigenvalues().minCoeff() <= emax * 1e-12) {
        const auto names = theta1_names(layout);
        std::vector<std::string> offending;
        for (int c = 0; c < k1; ++c) {
            if (es.eigenvalues()[c] > emax * 1e-12) continue;
            const Eigen::VectorXd v = es.eigenvectors().col(c).cwiseAbs();
            const double vmax = v.maxCoeff();
            for (int j = 0; j < k1; ++j)
                if (v[j] > 0.3 * vmax) offending.push_back(names[j]);
        }
        std::sort(offending.begin(), offending.end());
        offending.erase(std::unique(offending.begin(), offending.end()), offending.end());
        throw RankDeficient("outcome regression design is rank deficient", offending);
    }
    return es.eigenvectors() * (es.eigenvalues().cwiseInverse().asDiagonal() *
                                (es.eigenvectors().transpose() * rhs));
}

Eigen::VectorXd solve_theta2(const EEWorkspace& w, const Scheme& scheme, const Theta1View& theta1,
                             const Eigen::VectorXd& theta2_weights,
                             const Eigen::VectorXd& theta2_init) {
    const ParamLayout& layout = *w.layout;
    const ModelSpec& spec = layout.spec();
    const CovStructure s = layout.outcome_structure();
    const int k2 = layout.theta2_count();
    if (k2 == 0) return Eigen::VectorXd();

    // Weights stay fixed at theta2_weights throughout the solve.
    const CovMatrices weight_eps = build_cov(s, theta2_weights, /*with_derivs=*/false);
    std::vector<Eigen::MatrixXd> rinv(w.data->subjects.size());
    std::vector<double> c_model(w.data->subjects.size(), 0.0);
    std::vector<Eigen::VectorXd> resid(w.data->subjects.size());
    const Eigen::VectorXd theta1_flat = layout.flatten_theta1(theta1);
    for (std::size_t i = 0; i < w.data->subjects.size(); ++i) {
        const SubjectData& sub = w.data->subjects[i];
        const int n = sub.n_occasions();
        if (n == 0) continue;
        const Eigen::MatrixXd r = working_cov(scheme, theta1, weight_eps.value, w.eb[i].psi_tilde,
                                              spec.outcome_latents, n);
        rinv[i] = factor_or_throw(r).solve(Eigen::MatrixXd::Identity(n, n));
        c_model[i] = theta1.beta_full.dot(w.eb[i].psi_tilde * theta1.beta_full);
        resid[i] = sub.y - w.design[i] * theta1_flat;
    }

    if (is_linear_family(s.kind)) {
        // The covariance is linear in its parameters, so the trace equations
        // form a linear system in theta2.
        const CovMatrices basis = build_cov(s, theta2_init, /*with_derivs=*/true);
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(k2, k2);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k2);
        for (std::size_t i = 0; i < w.data->subjects.size(); ++i) {
            const int n = w.data->subjects[i].n_occasions();
            if (n == 0) continue;
            Eigen::MatrixXd target = resid[i] * resid[i].transpose();
            target.array() -= c_model[i];
            const Eigen::MatrixXd ri = rinv[i];
            for (int k = 0; k < k2; ++k) {
                const Eigen::MatrixXd wk = ri * basis.derivs[k].topLeftCorner(n, n) * ri;
                rhs[k] += (wk.array() * target.array()).sum();
                for (int j = 0; j < k2; ++j)
                    m(k, j) += (wk.array() * basis.derivs[j].topLeftCorner(n, n).array()).sum();
            }
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
        if (!lu.isInvertible())
            throw Singular("covariance trace equations are singular; the outcome data do not "
                           "identify this covariance family");
        Eigen::VectorXd theta2 = lu.solve(rhs);
        // Retreat toward the starting point if the solution leaves the
        // admissible region.
        int halvings = 0;
        while (!cov_params_admissible(s, theta2)) {
            if (++halvings > 50)
                throw BadParam("covariance update left the admissible region and step halving "
                               "failed to recover");
            theta2 = theta2_init + 0.5 * (theta2 - theta2_init);
        }
        return theta2;
    }

    // AR(1)-type families: damped Newton on the trace equations, holding the
    // weights fixed while the model covariance varies with theta2.
    auto equations = [&](const Eigen::VectorXd& theta2) -> Eigen::VectorXd {
        const CovMatrices trial = build_cov(s, theta2, /*with_derivs=*/true);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(k2);
        for (std::size_t i = 0; i < w.data->subjects.size(); ++i) {
            const int n = w.data->subjects[i].n_occasions();
            if (n == 0) continue;
            Eigen::MatrixXd bracket = resid[i] * resid[i].transpose();
            bracket -= trial.value.topLeftCorner(n, n);
            bracket.array() -= c_model[i];
            const Eigen::MatrixXd core = rinv[i] * bracket * rinv[i];
            for (int k = 0; k < k2; ++k)
                g[k] += 0.5 * (trial.derivs[k].topLeftCorner(n, n).array() * core.array()).sum();
        }
        return g / static_cast<double>(w.data->n_subjects());
    };
    NewtonOptions opts;
    opts.residual_tolerance = 1e-8;
    opts.admissible = [&](const Eigen::VectorXd& t) { return cov_params_admissible(s, t); };
    const NewtonResult res = newton_solve(equations, theta2_init, opts);
    if (!res.converged)
        throw NotConverged("covariance trace equations did not converge", res.iterations,
                           res.residual.cwiseAbs().maxCoeff());
    return res.x;
}

Eigen::VectorXd outcome_equations(const EEWorkspace& w, const Scheme& scheme,
                                  const Eigen::VectorXd& theta1, const Eigen::VectorXd& theta2) {
    const ParamLayout& layout = *w.layout;
    const Theta1View t1 = layout.theta1_view(theta1);
    const CovMatrices epsm = build_cov(layout.outcome_structure(), theta2, /*with_derivs=*/true);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(layout.theta1_count() + layout.theta2_count());
    for (std::size_t i = 0; i < w.data->subjects.size(); ++i)
        total += subject_outcome_contrib(layout, scheme, t1, epsm, w.eb[i],
                                         w.data->subjects[i]);
    return total / static_cast<double>(w.data->n_subjects());
}

Eigen::VectorXd OutcomeFit::full_values() const {
    Eigen::VectorXd values = Eigen::VectorXd::Zero(layout->size());
    values.head(layout->theta1_count()) = theta1;
    values.segment(layout->theta2_offset(), layout->theta2_count()) = theta2;
    values.tail(layout->theta3_count()) = theta3;
    return values;
}

OutcomeFit fit_outcome_ee(std::shared_ptr<const ParamLayout> layout, const Dataset& data,
                          const Eigen::VectorXd& theta3, const Scheme& scheme,
                          const OutcomeFitOptions& opts) {
    if (scheme.kind == SchemeKind::EE2 &&
        scheme.beta_star.size() !=
            static_cast<Eigen::Index>(layout->spec().outcome_latents.size()))
        throw BadParam("fixed-weight scheme needs one coefficient per outcome latent");

    const EEWorkspace w = make_ee_workspace(layout, data, theta3);
    const int k2 = layout->theta2_count();

    // Initialize the mean by unweighted least squares (the no-inflation
    // scheme with neutral covariance parameters), then the covariance by
    // residual moments.
    const Eigen::VectorXd neutral =
        layout->neutral_values().segment(layout->theta2_offset(), k2);
    Eigen::VectorXd theta1 = solve_theta1(w, Scheme::rc(), layout->theta1_view(
                                              Eigen::VectorXd::Zero(layout->theta1_count())),
                                          neutral);
    Eigen::VectorXd theta2 = moment_start(*layout, w, theta1).theta2;

    OutcomeFit fit;
    fit.layout = layout;
    fit.scheme = scheme;
    fit.theta3 = theta3;

    double prev_norm = outcome_equations(w, scheme, theta1, theta2).cwiseAbs().maxCoeff();
    bool converged = prev_norm < opts.ee_tolerance;
    int it = 0;
    while (!converged && it < opts.max_iterations) {
        ++it;
        const Theta1View t1_cur = layout->theta1_view(theta1);
        Eigen::VectorXd theta1_new = solve_theta1(w, scheme, t1_cur, theta2);
        Eigen::VectorXd theta2_new =
            solve_theta2(w, scheme, layout->theta1_view(theta1_new), theta2, theta2);
        double norm = outcome_equations(w, scheme, theta1_new, theta2_new).cwiseAbs().maxCoeff();

        // Halve the step while the refreshed-weight equation norm grows
        // (only the self-weighted scheme can cycle; the others solve exactly
        // in one pass of each block).
        int halvings = 0;
        while (norm > prev_norm * (1.0 + 1e-9) && halvings < 20) {
            ++halvings;
            theta1_new = theta1 + 0.5 * (theta1_new - theta1);
            theta2_new = theta2 + 0.5 * (theta2_new - theta2);
            norm = outcome_equations(w, scheme, theta1_new, theta2_new).cwiseAbs().maxCoeff();
        }

        theta1 = std::move(theta1_new);
        theta2 = std::move(theta2_new);
        prev_norm = norm;
        converged = norm < opts.ee_tolerance;
    }

    fit.theta1 = theta1;
    fit.theta2 = theta2;
    fit.ee_norm = prev_norm;
    fit.iterations = it;
    fit.converged = converged;
    if (!converged && opts.throw_on_nonconvergence)
        throw NotConverged("outcome estimating equations did not reach a fixed point", it,
                           prev_norm);

    std::map<std::uint64_t, PatternWeight> by_mask;
    for (std::size_t i = 0; i < data.subjects.size(); ++i) {
        const std::uint64_t key = mask_key(data.subjects[i].x_mask);
        auto [pos, inserted] = by_mask.try_emplace(key);
        if (inserted) {
            pos->second.mask = key;
            pos->second.psi_tilde = w.eb[i].psi_tilde;
        }
        pos->second.count += 1;
    }
    fit.pattern_weights.reserve(by_mask.size());
    for (auto& [key, pw] : by_mask) fit.pattern_weights.push_back(std::move(pw));
    return fit;
}

Eigen::MatrixXd ee_contributions(const ParamLayout& layout, const Dataset& data,
                                 const Eigen::VectorXd& full_values, const Scheme& scheme) {
    const ModelSpec& spec = layout.spec();
    const Theta1View t1 = layout.theta1_view(full_values);
    const Eigen::VectorXd theta2 = layout.theta2(full_values);
    const Theta3View t3 = layout.theta3_view(full_values);
    const MomentContext ctx(spec, t3);
    const CovMatrices epsm = build_cov(layout.outcome_structure(), theta2, /*with_derivs=*/true);

    const int k12 = layout.theta1_count() + layout.theta2_count();
    Eigen::MatrixXd rows(data.n_subjects(), layout.size());
    for (int i = 0; i < data.n_subjects(); ++i) {
        const SubjectData& s = data.subjects[i];
        const EbScores eb = ctx.eb(s.x, s.x_mask, s.w);
        rows.row(i).head(k12) =
            subject_outcome_contrib(layout, scheme, t1, epsm, eb, s).transpose();
        rows.row(i).tail(layout.theta3_count()) = ctx.x_score(s, layout).transpose();
    }
    return rows;
}

}  // namespace lexee
