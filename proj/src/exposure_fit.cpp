#include "lexee/exposure_fit.hpp"

#include <cmath>
#include <limits>

#include "lexee/errors.hpp"
#include "lexee/moments.hpp"
#include "lexee/optim.hpp"

namespace lexee {

namespace {

double guarded_mean_loglik(const ParamLayout& layout, const Eigen::VectorXd& theta3,
                           const Dataset& data) {
    try {
        return obs_loglik_x(layout, theta3, data) / std::max(1, data.n_subjects());
    } catch (const BadParam&) {
        return -std::numeric_limits<double>::infinity();
    } catch (const Singular&) {
        return -std::numeric_limits<double>::infinity();
    }
}

}  // namespace

Eigen::VectorXd embed_theta3(const ParamLayout& layout, const Eigen::VectorXd& theta3) {
    Eigen::VectorXd full = layout.neutral_values();
    full.head(layout.theta1_count()).setZero();
    full.segment(layout.theta3_offset(), layout.theta3_count()) = theta3;
    return full;
}

double obs_loglik_x(const ParamLayout& layout, const Eigen::VectorXd& theta3,
                    const Dataset& data) {
    const MomentContext ctx(layout.spec(), layout.theta3_view(embed_theta3(layout, theta3)));
    double total = 0.0;
    for (const auto& s : data.subjects) total += ctx.x_loglik(s);
    return total;
}

Eigen::VectorXd obs_loglik_x_subjects(const ParamLayout& layout, const Eigen::VectorXd& theta3,
                                      const Dataset& data) {
    const MomentContext ctx(layout.spec(), layout.theta3_view(embed_theta3(layout, theta3)));
    Eigen::VectorXd out(data.n_subjects());
    for (int i = 0; i < data.n_subjects(); ++i) out[i] = ctx.x_loglik(data.subjects[i]);
    return out;
}

Eigen::VectorXd score_theta3(const ParamLayout& layout, const Eigen::VectorXd& theta3,
                             const Dataset& data, double fd_scale) {
    const Eigen::VectorXd u_full = layout.to_unconstrained(embed_theta3(layout, theta3));
    const Eigen::VectorXd u3 = u_full.segment(layout.theta3_offset(), layout.theta3_count());
    Eigen::VectorXd u_work = u_full;
    auto f = [&](const Eigen::VectorXd& u) {
        u_work.segment(layout.theta3_offset(), layout.theta3_count()) = u;
        const Eigen::VectorXd natural = layout.from_unconstrained(u_work);
        return obs_loglik_x(layout, natural.segment(layout.theta3_offset(), layout.theta3_count()),
                            data);
    };
    return fd_gradient(f, u3, fd_scale);
}

Eigen::MatrixXd exposure_scores_natural(const ParamLayout& layout, const Eigen::VectorXd& theta3,
                                        const Dataset& data) {
    const MomentContext ctx(layout.spec(), layout.theta3_view(embed_theta3(layout, theta3)));
    Eigen::MatrixXd scores(data.n_subjects(), layout.theta3_count());
    for (int i = 0; i < data.n_subjects(); ++i)
        scores.row(i) = ctx.x_score(data.subjects[i], layout);
    return scores;
}

Eigen::VectorXd exposure_start(const ParamLayout& layout, const Dataset& data) {
    const ModelSpec& spec = layout.spec();
    const int p = spec.p(), l = spec.l();

    // Observed mean and variance per surrogate.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p), var = Eigen::VectorXd::Ones(p);
    for (int j = 0; j < p; ++j) {
        double sum = 0.0, sum2 = 0.0;
        int n = 0;
        for (const auto& s : data.subjects) {
            if (!s.x_mask[j]) continue;
            sum += s.x[j];
            sum2 += s.x[j] * s.x[j];
            ++n;
        }
        if (n > 1) {
            mean[j] = sum / n;
            var[j] = std::max(1e-3, sum2 / n - mean[j] * mean[j]);
        }
    }

    Theta3View v;
    v.nu = Eigen::VectorXd::Zero(p);
    v.lambda.resize(p, l);
    v.k = Eigen::MatrixXd::Zero(p, spec.r());
    v.alpha = Eigen::VectorXd::Zero(l);
    v.gamma1 = Eigen::MatrixXd::Zero(l, l);
    v.gamma2 = Eigen::MatrixXd::Zero(l, spec.r());
    for (int j = 0; j < p; ++j) {
        v.nu[j] = spec.nu[j].free ? 0.0 : spec.nu[j].value;
        for (int c = 0; c < l; ++c)
            v.lambda(j, c) = spec.lambda[j][c].free ? 1.0 : spec.lambda[j][c].value;
        for (int s = 0; s < spec.r(); ++s)
            if (!spec.k[j][s].free) v.k(j, s) = spec.k[j][s].value;
    }
    for (int c = 0; c < l; ++c)
        for (int d = 0; d < l; ++d)
            if (!spec.gamma1[c][d].free) v.gamma1(c, d) = spec.gamma1[c][d].value;
    for (int c = 0; c < l; ++c)
        for (int s = 0; s < spec.r(); ++s)
            if (!spec.gamma2[c][s].free) v.gamma2(c, s) = spec.gamma2[c][s].value;

    // Anchor surrogate per latent sets the location and variance scale.
    Eigen::VectorXd anchor_var = Eigen::VectorXd::Ones(l);
    for (int c = 0; c < l; ++c) {
        for (int j = 0; j < p; ++j) {
            const Entry& e = spec.lambda[j][c];
            if (!e.free && e.value != 0.0) {
                const double nu_j = spec.nu[j].free ? 0.0 : spec.nu[j].value;
                v.alpha[c] = (mean[j] - nu_j) / e.value;
                anchor_var[c] = std::max(1e-3, 0.5 * var[j] / (e.value * e.value));
                break;
            }
        }
    }

    const auto delta_s = layout.delta_structure();
    v.delta_params = Eigen::VectorXd::Zero(cov_param_count(delta_s));
    for (int j = 0; j < p; ++j)
        v.delta_params[j] =
            spec.delta.variances[j].free ? std::max(1e-3, 0.5 * var[j]) : spec.delta.variances[j].value;

    const auto psi_s = layout.psi_structure();
    v.psi_params = Eigen::VectorXd::Zero(cov_param_count(psi_s));
    if (spec.psi == PsiKind::Unstructured) {
        int k = 0;
        for (int i = 0; i < l; ++i)
            for (int j = 0; j <= i; ++j, ++k)
                if (i == j) v.psi_params[k] = anchor_var[i];
    } else {
        v.psi_params = anchor_var;
    }

    return layout.flatten_theta3(v);
}

ExposureFit fit_exposure_mle(std::shared_ptr<const ParamLayout> layout, const Dataset& data,
                             const Eigen::VectorXd* init, const ExposureFitOptions& opts) {
    if (data.n_subjects() == 0) throw BadParam("cannot fit exposure model to an empty dataset");
    const ParamLayout& lay = *layout;
    const int off = lay.theta3_offset(), k3 = lay.theta3_count();

    const Eigen::VectorXd start_natural = init ? *init : exposure_start(lay, data);
    Eigen::VectorXd u_work = lay.to_unconstrained(embed_theta3(lay, start_natural));
    const Eigen::VectorXd u0 = u_work.segment(off, k3);

    auto theta3_of = [&](const Eigen::VectorXd& u3) {
        Eigen::VectorXd u_full = u_work;
        u_full.segment(off, k3) = u3;
        return lay.from_unconstrained(u_full).segment(off, k3).eval();
    };
    auto objective = [&](const Eigen::VectorXd& u3) {
        return -guarded_mean_loglik(lay, theta3_of(u3), data);
    };
    // Analytic natural-scale score chained through the (data-free) transform
    // Jacobian; far cheaper than differencing the objective directly.
    auto gradient = [&](const Eigen::VectorXd& u3) -> Eigen::VectorXd {
        const Eigen::VectorXd t3 = theta3_of(u3);
        const Eigen::VectorXd score_nat =
            exposure_scores_natural(lay, t3, data).colwise().sum().transpose();
        const Eigen::MatrixXd jac =
            fd_jacobian([&](const Eigen::VectorXd& u) { return theta3_of(u); }, u3);
        return -(jac.transpose() * score_nat) / static_cast<double>(data.n_subjects());
    };

    MinimizeOptions mopts;
    mopts.max_iterations = opts.max_iterations;
    mopts.gradient_tolerance = opts.gradient_tolerance;
    mopts.objective_tolerance = opts.objective_tolerance;
    const MinimizeResult res = minimize_bfgs(objective, u0, mopts, gradient);

    ExposureFit fit;
    fit.layout = layout;
    fit.theta3 = theta3_of(res.x);
    fit.loglik = -res.value * data.n_subjects();
    fit.iterations = res.iterations;
    fit.converged = res.converged;
    for (const auto& s : data.subjects) fit.pattern_counts[mask_key(s.x_mask)]++;

    if (!fit.converged && opts.throw_on_nonconvergence) {
        throw NotConverged("exposure fit did not converge after " +
                               std::to_string(res.iterations) + " iterations (|grad| = " +
                               std::to_string(res.gradient.lpNorm<Eigen::Infinity>()) + ")",
                           res.iterations, res.gradient.lpNorm<Eigen::Infinity>());
    }

    if (opts.check_identifiability && fit.converged) {
        constexpr double kHessStep = 1e-4;
        fit.info_unconstrained = fd_hessian(objective, res.x, kHessStep);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.info_unconstrained,
                                                          Eigen::EigenvaluesOnly);
        const double emin = es.eigenvalues()[0], emax = es.eigenvalues()[k3 - 1];
        // Second differences carry O(eps * |f| / h^2) rounding noise per
        // entry, so an exactly flat direction can measure slightly positive;
        // eigenvalues inside that noise band count as zero.
        const double noise = 16.0 * k3 * std::numeric_limits<double>::epsilon() *
                             std::max(1.0, std::abs(res.value)) / (kHessStep * kHessStep);
        if (!(emax > 0.0) || emin <= noise || emin / emax < opts.identifiability_rcond) {
            throw Unidentified(
                "observed information at the exposure optimum is numerically singular; "
                "the data do not identify every free exposure parameter");
        }
    }
    return fit;
}

}  // namespace lexee
