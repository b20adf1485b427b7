#include "lexee/parameters.hpp"

#include <cmath>

#include "lexee/covariance.hpp"
#include "lexee/errors.hpp"

namespace lexee {

namespace {

// Lower-triangle row-major walk shared by packing and materialization.
template <typename F>
void for_lower_triangle(int n, F&& f) {
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) f(i, j);
}

Eigen::MatrixXd vech_to_sym(const Eigen::VectorXd& v, int n) {
    Eigen::MatrixXd m(n, n);
    int k = 0;
    for_lower_triangle(n, [&](int i, int j) {
        m(i, j) = v[k];
        m(j, i) = v[k];
        ++k;
    });
    return m;
}

Eigen::VectorXd sym_to_vech(const Eigen::MatrixXd& m) {
    const int n = static_cast<int>(m.rows());
    Eigen::VectorXd v(n * (n + 1) / 2);
    int k = 0;
    for_lower_triangle(n, [&](int i, int j) { v[k++] = m(i, j); });
    return v;
}

}  // namespace

void ParamLayout::add_scalar(const std::string& name, ParamKind kind) {
    blocks_.push_back(TransformBlock{BlockType::Scalar, size(), 1, 0, kind});
    params_.push_back(ParamInfo{name, kind});
}

void ParamLayout::add_block(BlockType type, int count, int dim,
                            const std::vector<std::string>& names) {
    blocks_.push_back(TransformBlock{type, size(), count, dim, ParamKind::Block});
    for (const auto& n : names) params_.push_back(ParamInfo{n, ParamKind::Block});
}

std::shared_ptr<const ParamLayout> ParamLayout::build(const ModelSpec& spec, int n_occasions) {
    auto layout = std::shared_ptr<ParamLayout>(new ParamLayout());
    layout->spec_ = spec;
    layout->n_occasions_ = std::max(1, n_occasions);
    const int p = spec.p(), l = spec.l(), r = spec.r(), q = spec.q();
    const int n = layout->n_occasions_;

    // theta1: outcome regression
    layout->add_scalar("beta0", ParamKind::Linear);
    for (int c : spec.outcome_latents)
        layout->add_scalar("beta[" + spec.latent_names[c] + "]", ParamKind::Linear);
    for (int s = 0; s < q; ++s)
        layout->add_scalar("kappa[" + spec.z_names[s] + "]", ParamKind::Linear);
    layout->theta1_count_ = layout->size();

    // theta2: outcome residual covariance
    const auto eps_names = cov_param_names(CovStructure{spec.outcome_cov, n, {}}, "eps_");
    switch (spec.outcome_cov) {
        case CovKind::Independence:
            layout->add_scalar(eps_names[0], ParamKind::Variance);
            break;
        case CovKind::CS:
            layout->add_block(BlockType::CsPair, 2, n, eps_names);
            break;
        case CovKind::CSH:
            layout->add_block(BlockType::CshGroup, n + 1, n, eps_names);
            break;
        case CovKind::AR1:
            layout->add_scalar(eps_names[0], ParamKind::Variance);
            layout->add_scalar(eps_names[1], ParamKind::Correlation);
            break;
        case CovKind::HAR1:
            for (int j = 0; j < n; ++j) layout->add_scalar(eps_names[j], ParamKind::Variance);
            layout->add_scalar(eps_names[n], ParamKind::Correlation);
            break;
        case CovKind::Unstructured:
            layout->add_block(BlockType::SpdVech, n * (n + 1) / 2, n, eps_names);
            break;
        default:
            throw BadParam("unsupported outcome covariance family");
    }
    layout->theta2_count_ = layout->size() - layout->theta1_count_;

    // theta3: exposure side
    for (int j = 0; j < p; ++j)
        if (spec.nu[j].free)
            layout->add_scalar("nu[" + spec.surrogate_names[j] + "]", ParamKind::Linear);
    for (int j = 0; j < p; ++j)
        for (int c = 0; c < l; ++c)
            if (spec.lambda[j][c].free)
                layout->add_scalar("lambda[" + spec.surrogate_names[j] + "," +
                                       spec.latent_names[c] + "]",
                                   ParamKind::Linear);
    for (int j = 0; j < p; ++j)
        for (int s = 0; s < r; ++s)
            if (spec.k[j][s].free)
                layout->add_scalar("k[" + spec.surrogate_names[j] + "," + spec.w_names[s] + "]",
                                   ParamKind::Linear);
    for (int c = 0; c < l; ++c)
        layout->add_scalar("alpha[" + spec.latent_names[c] + "]", ParamKind::Linear);
    for (int c = 0; c < l; ++c)
        for (int d = 0; d < l; ++d)
            if (spec.gamma1[c][d].free)
                layout->add_scalar("gamma1[" + spec.latent_names[c] + "," +
                                       spec.latent_names[d] + "]",
                                   ParamKind::Linear);
    for (int c = 0; c < l; ++c)
        for (int s = 0; s < r; ++s)
            if (spec.gamma2[c][s].free)
                layout->add_scalar("gamma2[" + spec.latent_names[c] + "," + spec.w_names[s] + "]",
                                   ParamKind::Linear);
    for (int j = 0; j < p; ++j)
        if (spec.delta.variances[j].free)
            layout->add_scalar("delta_v[" + spec.surrogate_names[j] + "]", ParamKind::Variance);
    for (int b = 0; b < static_cast<int>(spec.delta.ar1_blocks.size()); ++b)
        layout->add_scalar("delta_rho[" + std::to_string(b + 1) + "]", ParamKind::Correlation);
    if (spec.psi == PsiKind::Unstructured) {
        std::vector<std::string> names;
        for_lower_triangle(l, [&](int i, int j) {
            names.push_back("psi[" + spec.latent_names[i] + "," + spec.latent_names[j] + "]");
        });
        layout->add_block(BlockType::SpdVech, l * (l + 1) / 2, l, names);
    } else {
        for (int c = 0; c < l; ++c)
            layout->add_scalar("psi_v[" + spec.latent_names[c] + "]", ParamKind::Variance);
    }
    layout->theta3_count_ = layout->size() - layout->theta1_count_ - layout->theta2_count_;

    return layout;
}

int ParamLayout::index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
        if (params_[i].name == name) return i;
    return -1;
}

Eigen::VectorXd ParamLayout::to_unconstrained(const Eigen::VectorXd& natural) const {
    if (natural.size() != size())
        throw BadParam("parameter vector has wrong length");
    Eigen::VectorXd u(size());
    for (const auto& b : blocks_) {
        switch (b.type) {
            case BlockType::Scalar: {
                const double v = natural[b.offset];
                switch (b.scalar_kind) {
                    case ParamKind::Linear:
                        u[b.offset] = v;
                        break;
                    case ParamKind::Variance:
                        if (v <= 0.0)
                            throw BadParam("'" + name(b.offset) + "' must be positive, got " +
                                           std::to_string(v));
                        u[b.offset] = std::log(v);
                        break;
                    case ParamKind::Correlation:
                        if (!(v > -1.0 && v < 1.0))
                            throw BadParam("'" + name(b.offset) + "' must be inside (-1, 1)");
                        u[b.offset] = std::atanh(v);
                        break;
                    default:
                        throw BadParam("bad scalar kind");
                }
                break;
            }
            case BlockType::CsPair: {
                const double sigma2 = natural[b.offset], shared = natural[b.offset + 1];
                const double total = sigma2 + b.dim * shared;
                if (sigma2 <= 0.0 || total <= 0.0)
                    throw BadParam("compound-symmetry parameters are inadmissible");
                u[b.offset] = std::log(sigma2);
                u[b.offset + 1] = std::log(total);
                break;
            }
            case BlockType::CshGroup: {
                const int nv = b.count - 1;
                double inv_sum = 0.0;
                for (int j = 0; j < nv; ++j) {
                    const double v = natural[b.offset + j];
                    if (v <= 0.0) throw BadParam("'" + name(b.offset + j) + "' must be positive");
                    u[b.offset + j] = std::log(v);
                    inv_sum += 1.0 / v;
                }
                const double t = 1.0 + natural[b.offset + nv] * inv_sum;
                if (t <= 0.0) throw BadParam("heterogeneous compound-symmetry parameters are inadmissible");
                u[b.offset + nv] = std::log(t);
                break;
            }
            case BlockType::SpdVech: {
                Eigen::MatrixXd m = vech_to_sym(natural.segment(b.offset, b.count), b.dim);
                Eigen::LLT<Eigen::MatrixXd> llt(m);
                if (llt.info() != Eigen::Success)
                    throw BadParam("covariance block at '" + name(b.offset) +
                                   "' is not positive definite");
                Eigen::MatrixXd lmat = llt.matrixL();
                int k = 0;
                for_lower_triangle(b.dim, [&](int i, int j) {
                    u[b.offset + k] = (i == j) ? std::log(lmat(i, j)) : lmat(i, j);
                    ++k;
                });
                break;
            }
        }
    }
    return u;
}

Eigen::VectorXd ParamLayout::from_unconstrained(const Eigen::VectorXd& u) const {
    if (u.size() != size())
        throw BadParam("parameter vector has wrong length");
    Eigen::VectorXd natural(size());
    for (const auto& b : blocks_) {
        switch (b.type) {
            case BlockType::Scalar: {
                const double v = u[b.offset];
                switch (b.scalar_kind) {
                    case ParamKind::Linear: natural[b.offset] = v; break;
                    case ParamKind::Variance: natural[b.offset] = std::exp(v); break;
                    case ParamKind::Correlation: natural[b.offset] = std::tanh(v); break;
                    default: throw BadParam("bad scalar kind");
                }
                break;
            }
            case BlockType::CsPair: {
                const double sigma2 = std::exp(u[b.offset]);
                const double total = std::exp(u[b.offset + 1]);
                natural[b.offset] = sigma2;
                natural[b.offset + 1] = (total - sigma2) / b.dim;
                break;
            }
            case BlockType::CshGroup: {
                const int nv = b.count - 1;
                double inv_sum = 0.0;
                for (int j = 0; j < nv; ++j) {
                    natural[b.offset + j] = std::exp(u[b.offset + j]);
                    inv_sum += 1.0 / natural[b.offset + j];
                }
                natural[b.offset + nv] = (std::exp(u[b.offset + nv]) - 1.0) / inv_sum;
                break;
            }
            case BlockType::SpdVech: {
                Eigen::MatrixXd lmat = Eigen::MatrixXd::Zero(b.dim, b.dim);
                int k = 0;
                for_lower_triangle(b.dim, [&](int i, int j) {
                    lmat(i, j) = (i == j) ? std::exp(u[b.offset + k]) : u[b.offset + k];
                    ++k;
                });
                natural.segment(b.offset, b.count) = sym_to_vech(lmat * lmat.transpose());
                break;
            }
        }
    }
    return natural;
}

Eigen::VectorXd ParamLayout::neutral_values() const {
    Eigen::VectorXd v(size());
    for (const auto& b : blocks_) {
        switch (b.type) {
            case BlockType::Scalar:
                v[b.offset] = (b.scalar_kind == ParamKind::Variance) ? 1.0 : 0.0;
                break;
            case BlockType::CsPair:
                v[b.offset] = 1.0;
                v[b.offset + 1] = 0.25;
                break;
            case BlockType::CshGroup:
                v.segment(b.offset, b.count - 1).setOnes();
                v[b.offset + b.count - 1] = 0.25;
                break;
            case BlockType::SpdVech: {
                int k = 0;
                for_lower_triangle(b.dim, [&](int i, int j) {
                    v[b.offset + k] = (i == j) ? 1.0 : 0.0;
                    ++k;
                });
                break;
            }
        }
    }
    return v;
}

Theta1View ParamLayout::theta1_view(const Eigen::VectorXd& values) const {
    const int nsel = static_cast<int>(spec_.outcome_latents.size());
    Theta1View v;
    v.beta0 = values[0];
    v.beta = values.segment(1, nsel);
    v.kappa = values.segment(1 + nsel, spec_.q());
    v.beta_full = Eigen::VectorXd::Zero(spec_.l());
    for (int i = 0; i < nsel; ++i) v.beta_full[spec_.outcome_latents[i]] = v.beta[i];
    return v;
}

Eigen::VectorXd ParamLayout::theta2(const Eigen::VectorXd& values) const {
    return values.segment(theta2_offset(), theta2_count_);
}

Theta3View ParamLayout::theta3_view(const Eigen::VectorXd& values) const {
    const int p = spec_.p(), l = spec_.l(), r = spec_.r();
    Theta3View v;
    v.nu.resize(p);
    v.lambda.resize(p, l);
    v.k.resize(p, r);
    v.alpha.resize(l);
    v.gamma1.resize(l, l);
    v.gamma2.resize(l, r);

    int idx = theta3_offset();
    auto next = [&]() { return values[idx++]; };
    auto take = [&](const Entry& e) { return e.free ? next() : e.value; };

    for (int j = 0; j < p; ++j) v.nu[j] = take(spec_.nu[j]);
    for (int j = 0; j < p; ++j)
        for (int c = 0; c < l; ++c) v.lambda(j, c) = take(spec_.lambda[j][c]);
    for (int j = 0; j < p; ++j)
        for (int s = 0; s < r; ++s) v.k(j, s) = take(spec_.k[j][s]);
    for (int c = 0; c < l; ++c) v.alpha[c] = next();
    for (int c = 0; c < l; ++c)
        for (int d = 0; d < l; ++d) v.gamma1(c, d) = take(spec_.gamma1[c][d]);
    for (int c = 0; c < l; ++c)
        for (int s = 0; s < r; ++s) v.gamma2(c, s) = take(spec_.gamma2[c][s]);

    const auto delta_s = delta_structure();
    v.delta_params.resize(cov_param_count(delta_s));
    for (int j = 0; j < p; ++j) v.delta_params[j] = take(spec_.delta.variances[j]);
    for (int b = 0; b < static_cast<int>(spec_.delta.ar1_blocks.size()); ++b)
        v.delta_params[p + b] = next();

    const auto psi_s = psi_structure();
    v.psi_params.resize(cov_param_count(psi_s));
    for (int i = 0; i < v.psi_params.size(); ++i) v.psi_params[i] = next();

    if (idx != size())
        throw BadParam("internal packing mismatch while materializing theta3");

    v.omega_delta = build_cov(delta_s, v.delta_params, /*with_derivs=*/false).value;
    v.psi = build_cov(psi_s, v.psi_params, /*with_derivs=*/false).value;
    return v;
}

Eigen::VectorXd ParamLayout::flatten_theta1(const Theta1View& v) const {
    Eigen::VectorXd out(theta1_count_);
    out[0] = v.beta0;
    out.segment(1, v.beta.size()) = v.beta;
    out.segment(1 + v.beta.size(), v.kappa.size()) = v.kappa;
    return out;
}

Eigen::VectorXd ParamLayout::flatten_theta3(const Theta3View& v) const {
    const int p = spec_.p(), l = spec_.l(), r = spec_.r();
    Eigen::VectorXd out(theta3_count_);
    int idx = 0;
    auto put = [&](const Entry& e, double value) {
        if (e.free) out[idx++] = value;
    };
    for (int j = 0; j < p; ++j) put(spec_.nu[j], v.nu[j]);
    for (int j = 0; j < p; ++j)
        for (int c = 0; c < l; ++c) put(spec_.lambda[j][c], v.lambda(j, c));
    for (int j = 0; j < p; ++j)
        for (int s = 0; s < r; ++s) put(spec_.k[j][s], v.k(j, s));
    for (int c = 0; c < l; ++c) out[idx++] = v.alpha[c];
    for (int c = 0; c < l; ++c)
        for (int d = 0; d < l; ++d) put(spec_.gamma1[c][d], v.gamma1(c, d));
    for (int c = 0; c < l; ++c)
        for (int s = 0; s < r; ++s) put(spec_.gamma2[c][s], v.gamma2(c, s));
    for (int j = 0; j < p; ++j) put(spec_.delta.variances[j], v.delta_params[j]);
    for (int b = 0; b < static_cast<int>(spec_.delta.ar1_blocks.size()); ++b)
        out[idx++] = v.delta_params[p + b];
    for (int i = 0; i < v.psi_params.size(); ++i) out[idx++] = v.psi_params[i];
    if (idx != theta3_count_)
        throw BadParam("internal packing mismatch while flattening theta3");
    return out;
}

CovStructure ParamLayout::outcome_structure() const {
    return CovStructure{spec_.outcome_cov, n_occasions_, {}};
}

CovStructure ParamLayout::delta_structure() const {
    if (spec_.delta.ar1_blocks.empty()) return CovStructure{CovKind::Diagonal, spec_.p(), {}};
    return CovStructure{CovKind::DiagonalAr1Blocks, spec_.p(), spec_.delta.ar1_blocks};
}

CovStructure ParamLayout::psi_structure() const {
    const CovKind kind =
        spec_.psi == PsiKind::Unstructured ? CovKind::Unstructured : CovKind::Diagonal;
    return CovStructure{kind, spec_.l(), {}};
}

double ParamVector::at(const std::string& name) const {
    const int i = layout->index_of(name);
    if (i < 0) throw BadParam("no parameter named '" + name + "'");
    return values[i];
}

}  // namespace lexee
