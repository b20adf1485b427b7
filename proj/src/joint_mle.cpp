#include "lexee/joint_mle.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "lexee/covariance.hpp"
#include "lexee/errors.hpp"
#include "lexee/exposure_fit.hpp"
#include "lexee/moments.hpp"
#include "lexee/optim.hpp"
#include "lexee/outcome_ee.hpp"

namespace lexee {

namespace {

double gaussian_loglik(const Eigen::VectorXd& resid, const Eigen::MatrixXd& omega) {
    const int n = static_cast<int>(resid.size());
    Eigen::LLT<Eigen::MatrixXd> llt(omega);
    if (llt.info() != Eigen::Success)
        throw Singular("conditional outcome covariance is not positive definite");
    double log_det = 0.0;
    for (int j = 0; j < n; ++j) log_det += 2.0 * std::log(llt.matrixL()(j, j));
    const double quad = resid.dot(llt.solve(resid));
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

struct Evaluator {
    const ParamLayout& layout;
    const Dataset& data;

    Eigen::VectorXd per_subject(const Eigen::VectorXd& full) const {
        const Theta1View t1 = layout.theta1_view(full);
        const Eigen::VectorXd theta2 = layout.theta2(full);
        const Theta3View t3 = layout.theta3_view(full);
        const MomentContext ctx(layout.spec(), t3);
        const CovMatrices epsm =
            build_cov(layout.outcome_structure(), theta2, /*with_derivs=*/false);

        Eigen::VectorXd ll(data.n_subjects());
        for (int i = 0; i < data.n_subjects(); ++i) {
            const SubjectData& s = data.subjects[i];
            double v = ctx.x_loglik(s);
            const int n = s.n_occasions();
            if (n > 0) {
                const EbScores eb = ctx.eb(s.x, s.x_mask, s.w);
                const OutcomeMoments om =
                    outcome_conditional_moments(t1, epsm.value, eb, s.z, n);
                v += gaussian_loglik(s.y - om.mu, om.omega);
            }
            ll[i] = v;
        }
        return ll;
    }
};

}  // namespace

double joint_loglik(const ParamLayout& layout, const Eigen::VectorXd& full_values,
                    const Dataset& data) {
    return Evaluator{layout, data}.per_subject(full_values).sum();
}

Eigen::VectorXd joint_loglik_subjects(const ParamLayout& layout,
                                      const Eigen::VectorXd& full_values, const Dataset& data) {
    return Evaluator{layout, data}.per_subject(full_values);
}

Eigen::VectorXd score_full(const ParamLayout& layout, const Eigen::VectorXd& full_values,
                           const Dataset& data, double fd_scale) {
    const ModelSpec& spec = layout.spec();
    const Theta1View t1 = layout.theta1_view(full_values);
    const Eigen::VectorXd theta2 = layout.theta2(full_values);
    const Theta3View t3 = layout.theta3_view(full_values);
    const MomentContext ctx(spec, t3);
    const CovMatrices epsm = build_cov(layout.outcome_structure(), theta2, /*with_derivs=*/true);

    const int k1 = layout.theta1_count(), k2 = layout.theta2_count(),
              k3 = layout.theta3_count();
    const int nsel = static_cast<int>(spec.outcome_latents.size());
    Eigen::VectorXd score = Eigen::VectorXd::Zero(layout.size());

    for (const SubjectData& s : data.subjects) {
        const int n = s.n_occasions();
        if (n == 0) continue;
        const EbScores eb = ctx.eb(s.x, s.x_mask, s.w);
        const OutcomeMoments om = outcome_conditional_moments(t1, epsm.value, eb, s.z, n);
        Eigen::LLT<Eigen::MatrixXd> llt(om.omega);
        if (llt.info() != Eigen::Success)
            throw Singular("conditional outcome covariance is not positive definite");
        const Eigen::VectorXd e = s.y - om.mu;
        const Eigen::VectorXd oie = llt.solve(e);
        const Eigen::VectorXd oi1 = llt.solve(Eigen::VectorXd::Ones(n));
        const double one_oie = oie.sum();

        // Mean block. The coefficients on the latent summaries also enter the
        // conditional covariance through the posterior-uncertainty inflation,
        // so they pick up a trace term.
        score[0] += one_oie;
        const Eigen::VectorXd psib = eb.psi_tilde * t1.beta_full;
        const double quad_one = e.dot(oi1);
        const double trace_one = oi1.sum();
        for (int k = 0; k < nsel; ++k) {
            const int latent = spec.outcome_latents[k];
            score[1 + k] += eb.u_tilde[latent] * one_oie +
                            psib[latent] * (quad_one * quad_one - trace_one);
        }
        for (int sidx = 0; sidx < spec.q(); ++sidx)
            score[1 + nsel + sidx] += s.z.col(sidx).dot(oie);

        // Outcome-covariance block.
        const Eigen::MatrixXd oinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
        for (int k = 0; k < k2; ++k) {
            const Eigen::MatrixXd dk = epsm.derivs[k].topLeftCorner(n, n);
            score[k1 + k] += 0.5 * (oie.dot(dk * oie) - (oinv.array() * dk.array()).sum());
        }
    }

    // Exposure block: central differences of the total joint likelihood in
    // the natural coordinates.
    const Evaluator ev{layout, data};
    Eigen::VectorXd work = full_values;
    for (int k = 0; k < k3; ++k) {
        const int idx = layout.theta3_offset() + k;
        const double h = fd_scale * std::max(1.0, std::abs(full_values[idx]));
        work[idx] = full_values[idx] + h;
        const double up = ev.per_subject(work).sum();
        work[idx] = full_values[idx] - h;
        const double down = ev.per_subject(work).sum();
        work[idx] = full_values[idx];
        score[idx] = (up - down) / (2.0 * h);
    }
    return score;
}

JointFit fit_joint_mle(std::shared_ptr<const ParamLayout> layout, const Dataset& data,
                       const JointFitOptions& opts) {
    const Evaluator ev{*layout, data};
    const double n = std::max(1, data.n_subjects());

    Eigen::VectorXd start;
    if (opts.start) {
        start = *opts.start;
    } else {
        // Two-stage warm start; retreat to neutral values if either stage
        // fails on this data.
        start = layout->neutral_values();
        try {
            ExposureFitOptions exp_opts;
            exp_opts.throw_on_nonconvergence = false;
            exp_opts.check_identifiability = false;
            const ExposureFit efit = fit_exposure_mle(layout, data, nullptr, exp_opts);
            start.tail(layout->theta3_count()) = efit.theta3;
            OutcomeFitOptions out_opts;
            out_opts.throw_on_nonconvergence = false;
            const OutcomeFit ofit = fit_outcome_ee(layout, data, efit.theta3, Scheme::rc(),
                                                   out_opts);
            start.head(layout->theta1_count()) = ofit.theta1;
            start.segment(layout->theta2_offset(), layout->theta2_count()) = ofit.theta2;
        } catch (const Error&) {
            // keep whatever part of the warm start succeeded
        }
    }

    const auto objective = [&](const Eigen::VectorXd& u) -> double {
        try {
            return -ev.per_subject(layout->from_unconstrained(u)).sum() / n;
        } catch (const Error&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    MinimizeOptions mopts;
    mopts.max_iterations = opts.max_iterations;
    mopts.gradient_tolerance = opts.gradient_tolerance;
    mopts.objective_tolerance = opts.objective_tolerance;
    const MinimizeResult res = minimize_bfgs(objective, layout->to_unconstrained(start), mopts);

    JointFit fit;
    fit.layout = layout;
    fit.values = layout->from_unconstrained(res.x);
    fit.loglik = -res.value * n;
    fit.iterations = res.iterations;
    fit.converged = res.converged;
    if (!fit.converged && opts.throw_on_nonconvergence)
        throw NotConverged("joint likelihood maximization did not converge", res.iterations,
                           res.gradient.size() ? res.gradient.cwiseAbs().maxCoeff() : 0.0);

    if (opts.compute_covariance || opts.check_identifiability) {
        const auto neg_total = [&](const Eigen::VectorXd& v) -> double {
            return -ev.per_subject(v).sum();
        };
        const Eigen::MatrixXd hess = fd_hessian(neg_total, fit.values, opts.hessian_fd_scale);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
        const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
        const double emin = es.eigenvalues().minCoeff();
        // Eigenvalues inside the second-difference rounding-noise band count
        // as zero: an exactly flat direction can measure slightly positive.
        const double noise = 16.0 * static_cast<double>(hess.rows()) *
                             std::numeric_limits<double>::epsilon() *
                             std::max(1.0, std::abs(fit.loglik)) /
                             (opts.hessian_fd_scale * opts.hessian_fd_scale);
        if (opts.check_identifiability &&
            (emax <= 0.0 || emin <= noise || emin / emax < opts.identifiability_rcond))
            throw Unidentified(
                "observed information is singular at the maximum; the model is not identified "
                "by these data");
        if (opts.compute_covariance)
            fit.covariance = es.eigenvectors() *
                             es.eigenvalues().cwiseInverse().asDiagonal() *
                             es.eigenvectors().transpose();
    }
    return fit;
}

}  // namespace lexee
