#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "lexee/errors.hpp"
#include "lexee/joint_mle.hpp"
#include "lexee/optim.hpp"
#include "lexee/simulation.hpp"
#include "oracle.hpp"

using namespace lexee;

TEST_CASE("joint likelihood equals the oracle factorization") {
    oracle::Rng rng(61);
    for (int rep = 0; rep < 25; ++rep) {
        auto model = oracle::random_model(rng, false);
        const auto& layout = *model.layout;
        Dataset data = oracle::random_dataset(rng, model, 4);

        double want = 0.0;
        for (const SubjectData& s : data.subjects) {
            oracle::Joint joint = oracle::assemble_joint(layout, model.values, s);
            std::vector<int> obs = oracle::observed_x_indices(joint, s.x_mask);
            Eigen::VectorXd xv = oracle::observed_x_values(s);
            if (!obs.empty()) {
                oracle::Conditional xm = oracle::marginal(joint, obs);
                want += oracle::mvn_logpdf(xm.mean, xm.cov, xv);
            }
            if (joint.n > 0) {
                oracle::Conditional ym = oracle::condition(joint, oracle::y_indices(joint), obs, xv);
                want += oracle::mvn_logpdf(ym.mean, ym.cov, s.y);
            }
        }
        double got = joint_loglik(layout, model.values, data);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));

        Eigen::VectorXd per = joint_loglik_subjects(layout, model.values, data);
        CHECK(per.sum() == doctest::Approx(got).epsilon(1e-12));
    }
}

TEST_CASE("joint score matches finite differences of the joint likelihood") {
    oracle::Rng rng(62);
    for (int rep = 0; rep < 8; ++rep) {
        auto model = oracle::random_model(rng, false);
        const auto& layout = *model.layout;
        Dataset data = oracle::random_dataset(rng, model, 6);
        Eigen::VectorXd analytic = score_full(layout, model.values, data);
        auto f = [&](const Eigen::VectorXd& v) { return joint_loglik(layout, v, data); };
        Eigen::VectorXd fd = fd_gradient(f, model.values);
        double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
        CHECK((analytic - fd).cwiseAbs().maxCoeff() / scale < 1e-5);
    }
}

TEST_CASE("joint maximum likelihood recovers a generated model") {
    SimDesign d = default_bias_design();
    d.n_subjects = 1500;
    Dataset data = gen_dataset(d, 0, 0, 17);
    auto layout = ParamLayout::build(sim_model_spec(d), d.n_occasions);

    JointFit fit = fit_joint_mle(layout, data);
    CHECK(fit.converged);

    Eigen::VectorXd truth = sim_truth_values(d, 1.0, 0.5);
    CHECK(fit.values[layout->index_of("beta[u]")] == doctest::Approx(1.0).epsilon(0.12));
    CHECK(fit.values[layout->index_of("beta0")] == doctest::Approx(0.0).epsilon(0.12));
    CHECK(fit.values[layout->index_of("psi[u,u]")] ==
          doctest::Approx(truth[layout->index_of("psi[u,u]")]).epsilon(0.15));

    // the optimum dominates the generator point
    CHECK(fit.loglik >= joint_loglik(*layout, truth, data) - 1e-6);

    // inverse observed information: symmetric with positive diagonal
    REQUIRE(fit.covariance.rows() == layout->size());
    CHECK((fit.covariance - fit.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-8);
    for (int i = 0; i < layout->size(); ++i) CHECK(fit.covariance(i, i) > 0.0);

    // the score vanishes at the optimum
    Eigen::VectorXd score = score_full(*layout, fit.values, data) / data.n_subjects();
    CHECK(score.cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("a supplied start is honored and reaches the same optimum") {
    SimDesign d = default_bias_design();
    d.n_subjects = 400;
    Dataset data = gen_dataset(d, 0, 0, 23);
    auto layout = ParamLayout::build(sim_model_spec(d), d.n_occasions);

    JointFit from_default = fit_joint_mle(layout, data);

    JointFitOptions opts;
    opts.start = sim_truth_values(d, 1.0, 0.5);
    opts.compute_covariance = false;
    JointFit from_truth = fit_joint_mle(layout, data, opts);

    CHECK(from_default.converged);
    CHECK(from_truth.converged);
    CHECK(from_truth.loglik == doctest::Approx(from_default.loglik).epsilon(1e-7));
    CHECK((from_truth.values - from_default.values).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("joint fit reports an unidentified mean structure") {
    ModelSpec s = make_blank_spec(2, 1, 0, 0);
    s.lambda[0][0] = Entry::fixed(1.0);
    s.lambda[1][0] = Entry::fixed(1.0);
    s.outcome_latents = {0};
    auto layout = ParamLayout::build(validate_spec(s), 1);

    oracle::Rng rng(63);
    Dataset data;
    data.p = 2;
    for (int i = 0; i < 100; ++i) {
        SubjectData subj;
        subj.id = "s" + std::to_string(i);
        double u = rng.normal();
        subj.x = Eigen::VectorXd(2);
        subj.x[0] = u + 0.4 * rng.normal();
        subj.x[1] = 0.5 + u + 0.4 * rng.normal();
        subj.x_mask = {true, true};
        subj.w = Eigen::VectorXd(0);
        subj.z = Eigen::MatrixXd(1, 0);
        subj.y = Eigen::VectorXd::Constant(1, 0.3 + u + rng.normal());
        data.subjects.push_back(subj);
    }
    CHECK_THROWS_AS((void)fit_joint_mle(layout, data), Unidentified);
}

TEST_CASE("subjects lacking surrogates still contribute their outcomes") {
    // one subject with surrogates only, one with outcomes only: the joint
    // likelihood must equal the sum of the respective marginal terms.
    oracle::Rng rng(64);
    auto model = oracle::random_model(rng, false);
    const auto& layout = *model.layout;
    SubjectData with_x = oracle::random_subject(rng, model, false);
    SubjectData no_x = with_x;
    for (std::size_t j = 0; j < no_x.x_mask.size(); ++j) no_x.x_mask[j] = false;

    Dataset both;
    both.p = layout.spec().p();
    both.r = layout.spec().r();
    both.q = layout.spec().q();
    both.subjects = {with_x, no_x};

    Eigen::VectorXd per = joint_loglik_subjects(layout, model.values, both);
    oracle::Joint joint = oracle::assemble_joint(layout, model.values, no_x);
    oracle::Conditional ym =
        oracle::condition(joint, oracle::y_indices(joint), {}, Eigen::VectorXd(0));
    CHECK(per[1] == doctest::Approx(oracle::mvn_logpdf(ym.mean, ym.cov, no_x.y)).epsilon(1e-9));
}
