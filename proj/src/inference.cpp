#include "lexee/inference.hpp"

#include <cmath>

#include "lexee/errors.hpp"

namespace lexee {

namespace {

Eigen::VectorXd mean_equations(const ParamLayout& layout, const Dataset& data,
                               const Eigen::VectorXd& values, const Scheme& scheme) {
    return ee_contributions(layout, data, values, scheme).colwise().mean();
}

Eigen::MatrixXd jacobian_at_step(const ParamLayout& layout, const Dataset& data,
                                 const Eigen::VectorXd& values, const Scheme& scheme,
                                 double scale) {
    const int k = layout.size();
    Eigen::MatrixXd j(k, k);
    Eigen::VectorXd work = values;
    for (int c = 0; c < k; ++c) {
        const double h = scale * std::max(1.0, std::abs(values[c]));
        work[c] = values[c] + h;
        const Eigen::VectorXd up = mean_equations(layout, data, work, scheme);
        work[c] = values[c] - h;
        const Eigen::VectorXd down = mean_equations(layout, data, work, scheme);
        work[c] = values[c];
        j.col(c) = (up - down) / (2.0 * h);
    }
    return j;
}

Eigen::MatrixXd invert_block(const Eigen::MatrixXd& m, const char* what) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    if (!lu.isInvertible()) throw Singular(std::string(what) + " block is numerically singular");
    return lu.inverse();
}

double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

Eigen::MatrixXd estimate_A(const ParamLayout& layout, const Dataset& data,
                           const Eigen::VectorXd& full_values, const Scheme& scheme) {
    const Eigen::MatrixXd s = ee_contributions(layout, data, full_values, scheme);
    return s.transpose() * s / static_cast<double>(data.n_subjects());
}

Eigen::MatrixXd estimate_B(const ParamLayout& layout, const Dataset& data,
                           const Eigen::VectorXd& full_values, const Scheme& scheme) {
    const Eigen::MatrixXd j1 = jacobian_at_step(layout, data, full_values, scheme, 1e-6);
    const Eigen::MatrixXd j2 = jacobian_at_step(layout, data, full_values, scheme, 2e-6);
    const double disagreement =
        ((j1 - j2).cwiseAbs().array() / (1.0 + j1.cwiseAbs().array())).maxCoeff();
    if (disagreement > 1e-3)
        throw NumericJacobianFailure(
            "equation Jacobian is unstable: step sizes h and 2h disagree by " +
            std::to_string(disagreement));
    return j1;
}

SandwichParts sandwich_parts(const ParamLayout& layout, const Dataset& data,
                             const Eigen::VectorXd& full_values, const Scheme& scheme) {
    SandwichParts parts;
    parts.a = estimate_A(layout, data, full_values, scheme);
    parts.b = estimate_B(layout, data, full_values, scheme);
    parts.k1 = layout.theta1_count();
    parts.k2 = layout.theta2_count();
    parts.k3 = layout.theta3_count();
    parts.n_subjects = data.n_subjects();
    return parts;
}

SandwichVar sandwich_var(const SandwichParts& parts) {
    const int k1 = parts.k1, k2 = parts.k2, k3 = parts.k3;
    const int k = k1 + k2 + k3;
    const double n = std::max(1, parts.n_subjects);
    if (parts.a.rows() != k || parts.b.rows() != k)
        throw BadParam("sandwich blocks do not match the declared partition sizes");

    // Impose the expectation zeros so the regression-block decomposition is
    // an algebraic identity of the assembled system.
    Eigen::MatrixXd a = parts.a;
    Eigen::MatrixXd b = parts.b;
    a.block(0, k1 + k2, k1, k3).setZero();
    a.block(k1 + k2, 0, k3, k1).setZero();
    b.block(0, k1, k1, k2).setZero();
    b.block(k1 + k2, 0, k3, k1 + k2).setZero();

    Eigen::FullPivLU<Eigen::MatrixXd> lu(b);
    if (!lu.isInvertible()) throw Singular("equation Jacobian is numerically singular");
    const Eigen::MatrixXd binv = lu.inverse();

    SandwichVar out;
    out.covariance = binv * a * binv.transpose() / n;
    out.theta1 = out.covariance.topLeftCorner(k1, k1);

    const Eigen::MatrixXd b11inv = invert_block(b.topLeftCorner(k1, k1), "regression Jacobian");
    const Eigen::MatrixXd b33inv =
        invert_block(b.bottomRightCorner(k3, k3), "exposure Jacobian");
    out.theta3 = b33inv * a.bottomRightCorner(k3, k3) * b33inv.transpose() / n;
    out.naive = b11inv * a.topLeftCorner(k1, k1) * b11inv.transpose() / n;
    const Eigen::MatrixXd cross = b11inv * b.block(0, k1 + k2, k1, k3);
    out.correction = cross * out.theta3 * cross.transpose();
    return out;
}

SandwichVar sandwich_var(const ParamLayout& layout, const Dataset& data,
                         const Eigen::VectorXd& full_values, const Scheme& scheme) {
    return sandwich_var(sandwich_parts(layout, data, full_values, scheme));
}

WaldReport wald_report(const std::vector<std::string>& names, const Eigen::VectorXd& estimates,
                       const Eigen::MatrixXd& covariance) {
    if (static_cast<Eigen::Index>(names.size()) != estimates.size() ||
        covariance.rows() != estimates.size() || covariance.cols() != estimates.size())
        throw BadParam("wald report inputs have inconsistent sizes");

    WaldReport report;
    report.rows.reserve(names.size());
    for (Eigen::Index i = 0; i < estimates.size(); ++i) {
        WaldRow row;
        row.name = names[i];
        row.estimate = estimates[i];
        row.se = std::sqrt(std::max(0.0, covariance(i, i)));
        row.z = row.se > 0 ? row.estimate / row.se : 0.0;
        row.p_one_sided = normal_upper_tail(std::abs(row.z));
        row.p_two_sided = 2.0 * row.p_one_sided;
        row.ci_low = row.estimate - 1.96 * row.se;
        row.ci_high = row.estimate + 1.96 * row.se;
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace lexee
