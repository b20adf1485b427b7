#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "lexee/errors.hpp"
#include "lexee/exposure_fit.hpp"
#include "lexee/inference.hpp"
#include "lexee/optim.hpp"
#include "lexee/outcome_ee.hpp"
#include "lexee/simulation.hpp"

using namespace lexee;

namespace {

struct FittedEE {
    std::shared_ptr<const ParamLayout> layout;
    Dataset data;
    Eigen::VectorXd full;
    Scheme scheme;
};

FittedEE fitted_ee(SimDesign d, const Scheme& scheme, int replicate) {
    Dataset data = gen_dataset(d, 0, 0, replicate);
    auto layout = ParamLayout::build(sim_model_spec(d), d.n_occasions);
    ExposureFit ex = fit_exposure_mle(layout, data);
    OutcomeFit out = fit_outcome_ee(layout, data, ex.theta3, scheme);
    return {layout, std::move(data), out.full_values(), scheme};
}

}  // namespace

TEST_CASE("outer-product matrix matches its definition") {
    SimDesign d = default_bias_design();
    d.n_subjects = 120;
    FittedEE f = fitted_ee(d, Scheme::ee1(), 3);

    Eigen::MatrixXd contrib = ee_contributions(*f.layout, f.data, f.full, f.scheme);
    Eigen::MatrixXd want =
        contrib.transpose() * contrib / static_cast<double>(f.data.n_subjects());
    Eigen::MatrixXd got = estimate_A(*f.layout, f.data, f.full, f.scheme);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((got - got.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("equation jacobian matches plain finite differences") {
    SimDesign d = default_bias_design();
    d.n_subjects = 80;
    FittedEE f = fitted_ee(d, Scheme::rc(), 5);

    Eigen::MatrixXd b = estimate_B(*f.layout, f.data, f.full, f.scheme);
    auto g = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return ee_contributions(*f.layout, f.data, v, f.scheme).colwise().mean().transpose();
    };
    Eigen::MatrixXd fd = fd_jacobian(g, f.full);
    double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
    CHECK((b - fd).cwiseAbs().maxCoeff() / scale < 1e-4);
}

TEST_CASE("regression-block decomposition is exact") {
    SimDesign d = default_bias_design();
    d.n_subjects = 250;
    for (const Scheme& scheme :
         {Scheme::ee1(), Scheme::rc(), Scheme::ee2(Eigen::VectorXd::Constant(1, 0.7))}) {
        FittedEE f = fitted_ee(d, scheme, 7);
        SandwichVar sv = sandwich_var(*f.layout, f.data, f.full, f.scheme);
        const int k1 = f.layout->theta1_count();

        REQUIRE(sv.theta1.rows() == k1);
        CHECK((sv.theta1 - sv.covariance.topLeftCorner(k1, k1)).cwiseAbs().maxCoeff() == 0.0);

        // the full-matrix block equals naive + correction, entry for entry
        double scale = std::max(1.0, sv.theta1.cwiseAbs().maxCoeff());
        CHECK((sv.theta1 - (sv.naive + sv.correction)).cwiseAbs().maxCoeff() / scale < 1e-10);

        // the correction is positive semidefinite
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sv.correction);
        CHECK(es.eigenvalues().minCoeff() > -1e-10 * scale);

        // the whole covariance is symmetric with positive diagonal
        CHECK((sv.covariance - sv.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-10 * scale);
        for (int i = 0; i < k1; ++i) CHECK(sv.covariance(i, i) > 0.0);
    }
}

TEST_CASE("exposure-estimation correction vanishes for error-free surrogates") {
    // one surrogate equal to the latent (unit loading, zero error variance):
    // the posterior summary is the observation itself whatever the exposure
    // parameters, so the correction term must be identically zero.
    ModelSpec s = make_blank_spec(1, 1, 0, 0);
    s.lambda[0][0] = Entry::fixed(1.0);
    s.nu[0] = Entry::fixed(0.0);
    s.delta.variances[0] = Entry::fixed(0.0);
    s.outcome_latents = {0};
    s.outcome_cov = CovKind::CS;
    auto layout = ParamLayout::build(validate_spec(s), 4);

    Rng rng(99);
    Dataset data;
    data.p = 1;
    const int n = 4;
    for (int i = 0; i < 150; ++i) {
        SubjectData subj;
        subj.id = "s" + std::to_string(i);
        double u = 0.3 + rng.normal();
        subj.x = Eigen::VectorXd::Constant(1, u);
        subj.x_mask = {true};
        subj.w = Eigen::VectorXd(0);
        subj.z = Eigen::MatrixXd(n, 0);
        double shared = 0.8 * rng.normal();
        subj.y = Eigen::VectorXd(n);
        for (int j = 0; j < n; ++j) subj.y[j] = 0.5 + 1.2 * u + shared + rng.normal();
        data.subjects.push_back(subj);
    }

    ExposureFit ex = fit_exposure_mle(layout, data);
    OutcomeFit out = fit_outcome_ee(layout, data, ex.theta3, Scheme::ee1());
    SandwichVar sv = sandwich_var(*layout, data, out.full_values(), Scheme::ee1());

    CHECK(sv.correction.cwiseAbs().maxCoeff() == 0.0);
    double scale = std::max(1.0, sv.theta1.cwiseAbs().maxCoeff());
    CHECK((sv.theta1 - sv.naive).cwiseAbs().maxCoeff() / scale < 1e-12);
}

TEST_CASE("parts expose the slice sizes and subject count") {
    SimDesign d = default_bias_design();
    d.n_subjects = 90;
    FittedEE f = fitted_ee(d, Scheme::ee1(), 9);
    SandwichParts parts = sandwich_parts(*f.layout, f.data, f.full, f.scheme);
    CHECK(parts.k1 == f.layout->theta1_count());
    CHECK(parts.k2 == f.layout->theta2_count());
    CHECK(parts.k3 == f.layout->theta3_count());
    CHECK(parts.n_subjects == 90);
    CHECK(parts.a.rows() == f.layout->size());
    CHECK(parts.b.rows() == f.layout->size());

    SandwichVar direct = sandwich_var(parts);
    SandwichVar convenience = sandwich_var(*f.layout, f.data, f.full, f.scheme);
    CHECK((direct.covariance - convenience.covariance).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("wald rows carry the normal tail areas and interval") {
    Eigen::VectorXd est(1);
    est << -0.9941;
    Eigen::MatrixXd cov(1, 1);
    cov << 0.5598 * 0.5598;
    WaldReport rep = wald_report({"effect"}, est, cov);
    REQUIRE(rep.rows.size() == 1);
    const WaldRow& row = rep.rows[0];
    CHECK(row.name == "effect");
    CHECK(row.estimate == doctest::Approx(-0.9941));
    CHECK(row.se == doctest::Approx(0.5598));
    CHECK(row.z == doctest::Approx(-1.7758127902822438).epsilon(1e-12));
    CHECK(row.p_one_sided == doctest::Approx(0.03788188942954).epsilon(1e-9));
    CHECK(row.p_two_sided == doctest::Approx(0.07576377885908).epsilon(1e-9));
    CHECK(row.p_two_sided == doctest::Approx(2 * row.p_one_sided).epsilon(1e-12));
    CHECK(row.ci_low == doctest::Approx(-2.091308).epsilon(1e-9));
    CHECK(row.ci_high == doctest::Approx(0.103108).epsilon(1e-9));
}

TEST_CASE("wald table covers every named coordinate") {
    Eigen::VectorXd est(3);
    est << 1.0, -2.0, 0.0;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(3, 3) * 0.25;
    WaldReport rep = wald_report({"a", "b", "c"}, est, cov);
    REQUIRE(rep.rows.size() == 3);
    CHECK(rep.rows[0].z == doctest::Approx(2.0));
    CHECK(rep.rows[1].z == doctest::Approx(-4.0));
    CHECK(rep.rows[2].z == doctest::Approx(0.0));
    CHECK(rep.rows[2].p_two_sided == doctest::Approx(1.0));
    // two-sided area shrinks as |z| grows
    CHECK(rep.rows[1].p_two_sided < rep.rows[0].p_two_sided);
}
