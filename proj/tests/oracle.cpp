#include "oracle.hpp"

#include <cmath>

#include "lexee/covariance.hpp"
#include "lexee/errors.hpp"

namespace oracle {

using lexee::CovStructure;
using lexee::Entry;
using lexee::ModelSpec;
using lexee::ParamLayout;
using lexee::PsiKind;

Joint assemble_joint(const ParamLayout& layout, const Eigen::VectorXd& values,
                     const lexee::SubjectData& subject) {
    const ModelSpec& spec = layout.spec();
    const lexee::Theta1View t1 = layout.theta1_view(values);
    const lexee::Theta3View t3 = layout.theta3_view(values);
    const int l = spec.l(), p = spec.p(), n = subject.n_occasions();
    const int dim = l + p + n;

    const Eigen::MatrixXd omega_eps_full =
        lexee::build_cov(layout.outcome_structure(), layout.theta2(values),
                         /*with_derivs=*/false)
            .value;

    // Structural system M (u; x; y) = c + (xi; delta; eps).
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(dim, dim);
    m.topLeftCorner(l, l) -= t3.gamma1;
    m.block(l, 0, p, l) = -t3.lambda;
    Eigen::VectorXd b_full = Eigen::VectorXd::Zero(l);
    for (std::size_t k = 0; k < spec.outcome_latents.size(); ++k)
        b_full[spec.outcome_latents[k]] = t1.beta[static_cast<Eigen::Index>(k)];
    for (int j = 0; j < n; ++j) m.block(l + p + j, 0, 1, l) = -b_full.transpose();

    Eigen::VectorXd c(dim);
    c.head(l) = t3.alpha + t3.gamma2 * subject.w;
    c.segment(l, p) = t3.nu + t3.k * subject.w;
    c.tail(n) = Eigen::VectorXd::Constant(n, t1.beta0);
    if (n > 0) c.tail(n) += subject.z * t1.kappa;

    Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(dim, dim);
    noise.topLeftCorner(l, l) = t3.psi;
    noise.block(l, l, p, p) = t3.omega_delta;
    noise.bottomRightCorner(n, n) = omega_eps_full.topLeftCorner(n, n);

    const Eigen::MatrixXd m_inv = m.fullPivLu().inverse();
    Joint joint;
    joint.l = l;
    joint.p = p;
    joint.n = n;
    joint.mean = m_inv * c;
    joint.cov = m_inv * noise * m_inv.transpose();
    return joint;
}

Conditional condition(const Joint& joint, const std::vector<int>& targets,
                      const std::vector<int>& given, const Eigen::VectorXd& given_values) {
    const auto pick = [&](const std::vector<int>& rows, const std::vector<int>& cols) {
        Eigen::MatrixXd out(rows.size(), cols.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < cols.size(); ++j)
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    joint.cov(rows[i], cols[j]);
        return out;
    };
    Conditional out;
    out.mean.resize(static_cast<Eigen::Index>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i)
        out.mean[static_cast<Eigen::Index>(i)] = joint.mean[targets[i]];
    out.cov = pick(targets, targets);
    if (given.empty()) return out;

    Eigen::VectorXd shift(static_cast<Eigen::Index>(given.size()));
    for (std::size_t i = 0; i < given.size(); ++i)
        shift[static_cast<Eigen::Index>(i)] =
            given_values[static_cast<Eigen::Index>(i)] - joint.mean[given[i]];
    const Eigen::MatrixXd cross = pick(targets, given);
    const Eigen::MatrixXd gg_inv = pick(given, given).inverse();
    out.mean += cross * gg_inv * shift;
    out.cov -= cross * gg_inv * cross.transpose();
    return out;
}

Conditional marginal(const Joint& joint, const std::vector<int>& keep) {
    return condition(joint, keep, {}, Eigen::VectorXd());
}

double mvn_logpdf(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                  const Eigen::VectorXd& at) {
    const Eigen::Index k = mean.size();
    if (k == 0) return 0.0;
    const Eigen::VectorXd diff = at - mean;
    const double quad = diff.dot(cov.inverse() * diff);
    const double log_det = std::log(cov.determinant());
    return -0.5 * (static_cast<double>(k) * std::log(2.0 * M_PI) + log_det + quad);
}

std::vector<int> u_indices(const Joint& joint) {
    std::vector<int> idx;
    for (int i = 0; i < joint.l; ++i) idx.push_back(i);
    return idx;
}

std::vector<int> observed_x_indices(const Joint& joint, const lexee::Mask& mask) {
    std::vector<int> idx;
    for (int j = 0; j < joint.p; ++j)
        if (mask[static_cast<std::size_t>(j)]) idx.push_back(joint.l + j);
    return idx;
}

std::vector<int> y_indices(const Joint& joint) {
    std::vector<int> idx;
    for (int j = 0; j < joint.n; ++j) idx.push_back(joint.l + joint.p + j);
    return idx;
}

Eigen::VectorXd observed_x_values(const lexee::SubjectData& subject) {
    std::vector<double> vals;
    for (Eigen::Index j = 0; j < subject.x.size(); ++j)
        if (subject.x_mask[static_cast<std::size_t>(j)]) vals.push_back(subject.x[j]);
    return Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

namespace {

int rand_int(lexee::Rng& rng, int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(rng.uniform() * (hi - lo + 1));
}

bool rand_bool(lexee::Rng& rng, double p_true) { return rng.uniform() < p_true; }

lexee::CovKind random_outcome_family(lexee::Rng& rng) {
    switch (rand_int(rng, 0, 5)) {
        case 0: return lexee::CovKind::Independence;
        case 1: return lexee::CovKind::CS;
        case 2: return lexee::CovKind::CSH;
        case 3: return lexee::CovKind::AR1;
        case 4: return lexee::CovKind::HAR1;
        default: return lexee::CovKind::Unstructured;
    }
}

}  // namespace

RandomModel random_model(lexee::Rng& rng, bool fit_ready) {
    RandomModel m;
    const int l = rand_int(rng, 1, 2);
    const int p = fit_ready ? rand_int(rng, std::max(2, l + 1), 4) : rand_int(rng, l, 6);
    const int r = fit_ready ? rand_int(rng, 0, 1) : rand_int(rng, 0, 2);
    const int q = fit_ready ? rand_int(rng, 0, 1) : rand_int(rng, 0, 2);
    m.n_occasions = fit_ready ? rand_int(rng, 2, 4) : rand_int(rng, 1, 4);

    ModelSpec spec = lexee::make_blank_spec(p, l, r, q);

    // Distinct anchors: latent c is anchored by surrogate c with a fixed
    // non-zero loading.
    for (int c = 0; c < l; ++c)
        spec.lambda[c][c] = Entry::fixed(fit_ready ? 1.0 : 0.5 + rng.uniform());
    for (int j = 0; j < p; ++j)
        for (int c = 0; c < l; ++c) {
            if (j == c) continue;
            const double roll = rng.uniform();
            if (roll < 0.5)
                spec.lambda[j][c] = Entry::freed();
            else if (roll < 0.7)
                spec.lambda[j][c] = Entry::fixed(rng.normal() * 0.3);
        }

    // Intercepts: pin everything when the model must be estimable (the
    // latent intercepts stay free and carry the location); otherwise mix.
    for (int j = 0; j < p; ++j) {
        if (fit_ready)
            spec.nu[j] = Entry::fixed(0.0);
        else if (rand_bool(rng, 0.3))
            spec.nu[j] = Entry::fixed(rng.normal() * 0.5);
    }

    for (int j = 0; j < p; ++j)
        for (int s = 0; s < r; ++s)
            if (rand_bool(rng, 0.4)) spec.k[j][s] = Entry::freed();

    // Strictly lower-triangular latent regressions keep the system
    // recursive, so (I - Gamma1) is always invertible.
    for (int c = 1; c < l; ++c)
        for (int d = 0; d < c; ++d)
            if (rand_bool(rng, 0.6)) spec.gamma1[c][d] = Entry::freed();
    for (int c = 0; c < l; ++c)
        for (int s = 0; s < r; ++s)
            if (rand_bool(rng, 0.5)) spec.gamma2[c][s] = Entry::freed();

    if (!fit_ready && p >= 3 && rand_bool(rng, 0.35)) {
        const int len = rand_int(rng, 2, std::min(3, p));
        const int start = rand_int(rng, 0, p - len);
        std::vector<int> block;
        for (int j = 0; j < len; ++j) block.push_back(start + j);
        spec.delta.ar1_blocks.push_back(block);
    }

    spec.psi = rand_bool(rng, 0.5) ? PsiKind::Unstructured : PsiKind::Diagonal;

    spec.outcome_latents.clear();
    for (int c = 0; c < l; ++c)
        if (c == 0 || rand_bool(rng, 0.6)) spec.outcome_latents.push_back(c);
    spec.outcome_cov = fit_ready && m.n_occasions == 1 ? lexee::CovKind::Independence
                                                       : random_outcome_family(rng);

    m.spec = lexee::validate_spec(spec);
    m.layout = ParamLayout::build(m.spec, m.n_occasions);

    // Random admissible values: push a moderate Gaussian draw through the
    // unconstrained-to-natural bijection. Families with a shared covariance
    // term are only conditionally positive definite, so redraw until the
    // assembled outcome block is admissible.
    const CovStructure outcome_s = m.layout->outcome_structure();
    for (int attempt = 0; attempt < 200; ++attempt) {
        Eigen::VectorXd u(m.layout->size());
        for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = 0.5 * rng.normal();
        m.values = m.layout->from_unconstrained(u);
        if (lexee::cov_params_admissible(outcome_s, m.layout->theta2(m.values))) return m;
    }
    throw lexee::BadParam("could not draw admissible random parameters");
}

lexee::SubjectData random_subject(lexee::Rng& rng, const RandomModel& model,
                                  bool allow_all_missing) {
    const ModelSpec& spec = model.spec;
    lexee::SubjectData s;
    s.w = rng.normal_vector(spec.r());
    const int n = model.n_occasions;
    s.z = Eigen::MatrixXd(n, spec.q());
    for (int j = 0; j < n; ++j) s.z.row(j) = rng.normal_vector(spec.q()).transpose();
    s.y = Eigen::VectorXd::Zero(n);
    s.x = Eigen::VectorXd::Zero(spec.p());
    s.x_mask.assign(static_cast<std::size_t>(spec.p()), true);

    const Joint joint = assemble_joint(*model.layout, model.values, s);
    const Eigen::MatrixXd chol =
        Eigen::LLT<Eigen::MatrixXd>(
            joint.cov + 1e-12 * Eigen::MatrixXd::Identity(joint.cov.rows(), joint.cov.cols()))
            .matrixL();
    const Eigen::VectorXd draw = joint.mean + chol * rng.normal_vector(joint.cov.rows());
    s.u_true = draw.head(spec.l());
    s.x = draw.segment(spec.l(), spec.p());
    s.y = draw.tail(n);

    if (!rand_bool(rng, 0.5)) {
        for (int j = 0; j < spec.p(); ++j)
            s.x_mask[static_cast<std::size_t>(j)] = rand_bool(rng, 0.75);
        if (!allow_all_missing) {
            bool any = false;
            for (bool b : s.x_mask) any = any || b;
            if (!any) s.x_mask[0] = true;
        }
    }
    return s;
}

lexee::Dataset random_dataset(lexee::Rng& rng, const RandomModel& model, int n_subjects) {
    lexee::Dataset data;
    data.p = model.spec.p();
    data.r = model.spec.r();
    data.q = model.spec.q();
    for (int i = 0; i < n_subjects; ++i) {
        lexee::SubjectData s = random_subject(rng, model, /*allow_all_missing=*/false);
        s.id = "s" + std::to_string(i + 1);
        data.subjects.push_back(std::move(s));
    }
    return data;
}

}  // namespace oracle
