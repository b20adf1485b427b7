#include "lexee/moments.hpp"

#include <cmath>

#include "lexee/covariance.hpp"
#include "lexee/errors.hpp"

namespace lexee {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_condition(const Eigen::MatrixXd& m, const std::string& what) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    const double smin = sv[sv.size() - 1], smax = sv[0];
    if (!(smin > 0.0) || smax / smin > 1e12) {
        throw Singular(what + " is numerically singular");
    }
}

}  // namespace

MomentContext::MomentContext(const ModelSpec& spec, const Theta3View& theta3)
    : spec_(spec), t3_(theta3) {
    const int l = spec_.l();
    Eigen::MatrixXd i_minus_g1 = Eigen::MatrixXd::Identity(l, l) - t3_.gamma1;
    check_condition(i_minus_g1, "I - gamma1");
    a_ = i_minus_g1.inverse();
    psi_u_ = a_ * t3_.psi * a_.transpose();
    omega_x_ = t3_.lambda * psi_u_ * t3_.lambda.transpose() + t3_.omega_delta;
}

LatentMoments MomentContext::latent_marginal(const Eigen::VectorXd& w) const {
    Eigen::VectorXd shift = t3_.alpha;
    if (w.size() > 0) shift += t3_.gamma2 * w;
    return LatentMoments{a_ * shift, psi_u_};
}

SurrogateMoments MomentContext::surrogate_marginal(const Eigen::VectorXd& w) const {
    const LatentMoments lm = latent_marginal(w);
    Eigen::VectorXd mu_x = t3_.nu + t3_.lambda * lm.mu_u;
    if (w.size() > 0) mu_x += t3_.k * w;
    return SurrogateMoments{mu_x, omega_x_};
}

const MomentContext::PatternBlock& MomentContext::pattern(const Mask& mask) const {
    const std::uint64_t key = mask_key(mask);
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return *it->second;
    }

    auto block = std::make_unique<PatternBlock>();
    for (int j = 0; j < static_cast<int>(mask.size()); ++j)
        if (mask[j]) block->observed.push_back(j);
    const int k = static_cast<int>(block->observed.size());
    const int l = spec_.l();

    if (k == 0) {
        block->psi_tilde = psi_u_;
        block->gain = Eigen::MatrixXd::Zero(l, 0);
        block->gain_lambda = Eigen::MatrixXd::Zero(l, l);
    } else {
        Eigen::MatrixXd omega_oo(k, k);
        Eigen::MatrixXd lambda_o(k, spec_.l());
        for (int a = 0; a < k; ++a) {
            lambda_o.row(a) = t3_.lambda.row(block->observed[a]);
            for (int b = 0; b < k; ++b)
                omega_oo(a, b) = omega_x_(block->observed[a], block->observed[b]);
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(omega_oo,
                                                          Eigen::EigenvaluesOnly);
        const double emin = es.eigenvalues()[0], emax = es.eigenvalues()[k - 1];
        if (!(emin > 0.0) || emin / emax < 1e-12) {
            throw Singular("observed surrogate covariance block is numerically singular");
        }
        block->llt.compute(omega_oo);
        if (block->llt.info() != Eigen::Success) {
            throw Singular("observed surrogate covariance block failed factorization");
        }
        block->log_det = block->llt.vectorD().array().log().sum();

        // gain' solves Omega_oo gain' = Lambda_o Psi_u
        block->gain = block->llt.solve(lambda_o * psi_u_).transpose();
        block->gain_lambda = block->gain * lambda_o;
        block->psi_tilde = psi_u_ - block->gain_lambda * psi_u_;
        block->psi_tilde = 0.5 * (block->psi_tilde + block->psi_tilde.transpose()).eval();
    }

    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = cache_.try_emplace(key, std::move(block)).first;
    return *it->second;
}

EbScores MomentContext::eb(const Eigen::VectorXd& x, const Mask& mask,
                           const Eigen::VectorXd& w) const {
    if (static_cast<int>(mask.size()) != spec_.p() || x.size() != spec_.p())
        throw BadParam("surrogate vector/mask length does not match the model");
    if (w.size() != spec_.r())
        throw BadParam("subject covariate length does not match the model");
    const PatternBlock& pb = pattern(mask);
    const LatentMoments lm = latent_marginal(w);
    const int k = static_cast<int>(pb.observed.size());
    // Grouped as (I - gain Lambda_o) mu_u + gain (x_o - nu_o - K_o w): the
    // latent-mean contribution cancels outright when the observed block is
    // error-free (gain Lambda_o == I), instead of up to roundoff.
    Eigen::VectorXd kw = Eigen::VectorXd::Zero(spec_.p());
    if (w.size() > 0) kw = t3_.k * w;
    Eigen::VectorXd base(k);
    for (int a = 0; a < k; ++a) {
        const int j = pb.observed[a];
        base[a] = x[j] - t3_.nu[j] - kw[j];
    }
    Eigen::VectorXd u_tilde = (lm.mu_u - pb.gain_lambda * lm.mu_u) + pb.gain * base;
    return EbScores{std::move(u_tilde), pb.psi_tilde};
}

double MomentContext::x_loglik(const SubjectData& s) const {
    const PatternBlock& pb = pattern(s.x_mask);
    const int k = static_cast<int>(pb.observed.size());
    if (k == 0) return 0.0;
    const SurrogateMoments sm = surrogate_marginal(s.w);
    Eigen::VectorXd resid(k);
    for (int a = 0; a < k; ++a) resid[a] = s.x[pb.observed[a]] - sm.mu_x[pb.observed[a]];
    const double quad = resid.dot(pb.llt.solve(resid));
    return -0.5 * (k * std::log(kTwoPi) + pb.log_det + quad);
}

Eigen::VectorXd MomentContext::x_score(const SubjectData& s, const ParamLayout& layout) const {
    const ModelSpec& spec = layout.spec();
    const int p = spec.p(), l = spec.l(), r = spec.r();
    Eigen::VectorXd score = Eigen::VectorXd::Zero(layout.theta3_count());

    const PatternBlock& pb = pattern(s.x_mask);
    const int k = static_cast<int>(pb.observed.size());
    if (k == 0) return score;

    const SurrogateMoments sm = surrogate_marginal(s.w);
    const LatentMoments lm = latent_marginal(s.w);

    Eigen::MatrixXd lambda_o(k, l);
    Eigen::VectorXd resid(k);
    for (int a = 0; a < k; ++a) {
        lambda_o.row(a) = t3_.lambda.row(pb.observed[a]);
        resid[a] = s.x[pb.observed[a]] - sm.mu_x[pb.observed[a]];
    }
    const Eigen::VectorXd sv = pb.llt.solve(resid);             // Omega^-1 r
    const Eigen::VectorXd t = lambda_o.transpose() * sv;        // l
    const Eigen::VectorXd at = a_.transpose() * t;              // l ("d mean" carrier)
    const Eigen::VectorXd v = psi_u_ * t;                       // l

    // Pattern-level matrices for the trace terms.
    const Eigen::MatrixXd inv = pb.llt.solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::MatrixXd la = lambda_o * a_;                   // k x l
    const Eigen::MatrixXd m = lambda_o * psi_u_;                // k x l
    const Eigen::MatrixXd im = pb.llt.solve(m);                 // k x l
    const Eigen::MatrixXd imla = im.transpose() * la;           // l x l
    const Eigen::MatrixXd q = la.transpose() * inv * la;        // l x l

    std::vector<int> pos(p, -1);
    for (int a = 0; a < k; ++a) pos[pb.observed[a]] = a;

    int idx = 0;
    for (int j = 0; j < p; ++j)
        if (spec.nu[j].free) score[idx++] = (pos[j] >= 0) ? sv[pos[j]] : 0.0;

    for (int j = 0; j < p; ++j) {
        for (int c = 0; c < l; ++c) {
            if (!spec.lambda[j][c].free) continue;
            double g = 0.0;
            if (pos[j] >= 0) {
                const int a = pos[j];
                // d mu = e_a mu_u[c]; d Omega = e_a m[:,c]' + m[:,c] e_a'
                g = lm.mu_u[c] * sv[a] + sv[a] * (m.col(c).dot(sv)) - im(a, c);
            }
            score[idx++] = g;
        }
    }

    for (int j = 0; j < p; ++j)
        for (int sidx = 0; sidx < r; ++sidx)
            if (spec.k[j][sidx].free)
                score[idx++] = (pos[j] >= 0) ? s.w[sidx] * sv[pos[j]] : 0.0;

    for (int c = 0; c < l; ++c) score[idx++] = at[c];

    for (int c = 0; c < l; ++c) {
        for (int d = 0; d < l; ++d) {
            if (!spec.gamma1[c][d].free) continue;
            // d mu_u = A e_c mu_u[d]; d Psi_u = A e_c Psi_u[d,:] + sym
            score[idx++] = lm.mu_u[d] * at[c] + at[c] * v[d] - imla(d, c);
        }
    }

    for (int c = 0; c < l; ++c)
        for (int sidx = 0; sidx < r; ++sidx)
            if (spec.gamma2[c][sidx].free) score[idx++] = s.w[sidx] * at[c];

    // Measurement-error covariance parameters: d Omega = d Omega_delta.
    const auto delta_s = layout.delta_structure();
    const auto delta_cm = build_cov(delta_s, t3_.delta_params, /*with_derivs=*/true);
    auto delta_term = [&](int param) {
        const Eigen::MatrixXd& dfull = delta_cm.derivs[param];
        double quad = 0.0, trace = 0.0;
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                const double d = dfull(pb.observed[a], pb.observed[b]);
                if (d == 0.0) continue;
                quad += sv[a] * d * sv[b];
                trace += inv(a, b) * d;
            }
        }
        return 0.5 * (quad - trace);
    };
    for (int j = 0; j < p; ++j)
        if (spec.delta.variances[j].free) score[idx++] = delta_term(j);
    for (int b = 0; b < static_cast<int>(spec.delta.ar1_blocks.size()); ++b)
        score[idx++] = delta_term(p + b);

    // Psi parameters: d Psi_u = A E A'; the carriers reduce to at and q/imla.
    if (spec.psi == PsiKind::Unstructured) {
        for (int c = 0; c < l; ++c) {
            for (int d = 0; d <= c; ++d) {
                if (c == d) {
                    score[idx++] = 0.5 * (at[c] * at[c] - q(c, c));
                } else {
                    score[idx++] = at[c] * at[d] - q(c, d);
                }
            }
        }
    } else {
        for (int c = 0; c < l; ++c) score[idx++] = 0.5 * (at[c] * at[c] - q(c, c));
    }

    if (idx != layout.theta3_count())
        throw BadParam("internal packing mismatch in x_score");
    return score;
}

LatentMoments latent_marginal_moments(const MomentContext& ctx, const Eigen::VectorXd& w) {
    return ctx.latent_marginal(w);
}

SurrogateMoments surrogate_marginal_moments(const MomentContext& ctx, const Eigen::VectorXd& w) {
    return ctx.surrogate_marginal(w);
}

EbScores eb_scores(const MomentContext& ctx, const Eigen::VectorXd& x, const Mask& mask,
                   const Eigen::VectorXd& w) {
    return ctx.eb(x, mask, w);
}

OutcomeMoments outcome_conditional_moments(const Theta1View& theta1,
                                           const Eigen::MatrixXd& omega_eps_full,
                                           const EbScores& eb, const Eigen::MatrixXd& z,
                                           int n_i) {
    OutcomeMoments out;
    out.mu = Eigen::VectorXd::Constant(n_i, theta1.beta0 + theta1.beta_full.dot(eb.u_tilde));
    if (z.cols() > 0 && n_i > 0) out.mu += z.topRows(n_i) * theta1.kappa;
    const double inflation = theta1.beta_full.dot(eb.psi_tilde * theta1.beta_full);
    out.omega = omega_eps_full.topLeftCorner(n_i, n_i);
    out.omega.array() += inflation;
    return out;
}

MomentSet compute_moment_set(const ParamLayout& layout, const Eigen::VectorXd& values,
                             const SubjectData& subject) {
    const MomentContext ctx(layout.spec(), layout.theta3_view(values));
    MomentSet ms;
    ms.latent = ctx.latent_marginal(subject.w);
    ms.surrogate = ctx.surrogate_marginal(subject.w);
    ms.eb = ctx.eb(subject.x, subject.x_mask, subject.w);
    const auto eps = build_cov(layout.outcome_structure(), layout.theta2(values),
                               /*with_derivs=*/false);
    ms.outcome = outcome_conditional_moments(layout.theta1_view(values), eps.value, ms.eb,
                                             subject.z, subject.n_occasions());
    return ms;
}

}  // namespace lexee
