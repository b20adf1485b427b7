#include "lexee/optim.hpp"

#include <cmath>
#include <limits>

#include "lexee/errors.hpp"

namespace lexee {

namespace {

bool finite(double v) { return std::isfinite(v); }

double step_for(double x, double scale) { return scale * std::max(1.0, std::abs(x)); }

}  // namespace

Eigen::VectorXd fd_gradient(const Objective& f, const Eigen::VectorXd& x, double scale) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (int k = 0; k < x.size(); ++k) {
        const double h = step_for(x[k], scale);
        xp[k] = x[k] + h;
        const double fp = f(xp);
        xp[k] = x[k] - h;
        const double fm = f(xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Eigen::MatrixXd fd_jacobian(const VectorFn& f, const Eigen::VectorXd& x, double scale) {
    Eigen::VectorXd xp = x;
    Eigen::MatrixXd jac;
    for (int k = 0; k < x.size(); ++k) {
        const double h = step_for(x[k], scale);
        xp[k] = x[k] + h;
        const Eigen::VectorXd fp = f(xp);
        xp[k] = x[k] - h;
        const Eigen::VectorXd fm = f(xp);
        xp[k] = x[k];
        if (jac.size() == 0) jac.resize(fp.size(), x.size());
        jac.col(k) = (fp - fm) / (2.0 * h);
    }
    if (jac.size() == 0) jac.resize(0, x.size());
    return jac;
}

Eigen::MatrixXd fd_hessian(const Objective& f, const Eigen::VectorXd& x, double scale) {
    const int n = static_cast<int>(x.size());
    Eigen::MatrixXd h(n, n);
    Eigen::VectorXd xp = x;
    const double f0 = f(x);
    for (int i = 0; i < n; ++i) {
        const double hi = step_for(x[i], scale);
        xp[i] = x[i] + hi;
        const double fp = f(xp);
        xp[i] = x[i] - hi;
        const double fm = f(xp);
        xp[i] = x[i];
        h(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
        for (int j = i + 1; j < n; ++j) {
            const double hj = step_for(x[j], scale);
            xp[i] = x[i] + hi; xp[j] = x[j] + hj;
            const double fpp = f(xp);
            xp[j] = x[j] - hj;
            const double fpm = f(xp);
            xp[i] = x[i] - hi; xp[j] = x[j] + hj;
            const double fmp = f(xp);
            xp[j] = x[j] - hj;
            const double fmm = f(xp);
            xp[i] = x[i]; xp[j] = x[j];
            h(i, j) = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h(j, i) = h(i, j);
        }
    }
    return h;
}

MinimizeResult minimize_bfgs(const Objective& f, const Eigen::VectorXd& x0,
                             const MinimizeOptions& opts, const VectorFn& gradient) {
    const int n = static_cast<int>(x0.size());
    auto grad = [&](const Eigen::VectorXd& x) {
        return gradient ? gradient(x) : fd_gradient(f, x, opts.fd_scale);
    };

    MinimizeResult res;
    res.x = x0;
    res.value = f(x0);
    if (!finite(res.value)) {
        throw BadParam("objective is not finite at the starting point");
    }
    res.gradient = grad(res.x);
    res.trace.push_back(res.value);

    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);

    for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
        if (res.gradient.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance) {
            res.converged = true;
            return res;
        }

        Eigen::VectorXd dir = -(hinv * res.gradient);
        double slope = dir.dot(res.gradient);
        if (!(slope < 0.0)) {  // not a descent direction; reset curvature
            hinv.setIdentity();
            dir = -res.gradient;
            slope = dir.dot(res.gradient);
        }

        // Armijo backtracking.
        double step = 1.0;
        double f_new = std::numeric_limits<double>::infinity();
        Eigen::VectorXd x_new;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = res.x + step * dir;
            f_new = f(x_new);
            if (finite(f_new) && f_new <= res.value + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // No progress possible along this direction at any step size.
            res.converged = res.gradient.lpNorm<Eigen::Infinity>() < 1e2 * opts.gradient_tolerance;
            return res;
        }

        const Eigen::VectorXd g_new = grad(x_new);
        const Eigen::VectorXd sdiff = x_new - res.x;
        const Eigen::VectorXd ydiff = g_new - res.gradient;
        const double sy = sdiff.dot(ydiff);
        if (sy > 1e-12 * sdiff.norm() * ydiff.norm()) {
            const Eigen::VectorXd hy = hinv * ydiff;
            const double yhy = ydiff.dot(hy);
            hinv += ((sy + yhy) / (sy * sy)) * (sdiff * sdiff.transpose());
            hinv -= (hy * sdiff.transpose() + sdiff * hy.transpose()) / sy;
        }

        const double rel_change = std::abs(f_new - res.value) / std::max(1.0, std::abs(res.value));
        res.x = x_new;
        res.value = f_new;
        res.gradient = g_new;
        res.trace.push_back(f_new);
        if (opts.on_accept) opts.on_accept(res.x, res.value);

        if (rel_change < opts.objective_tolerance) {
            res.converged = true;
            ++res.iterations;
            return res;
        }
    }
    res.converged = res.gradient.lpNorm<Eigen::Infinity>() < opts.gradient_tolerance;
    return res;
}

NewtonResult newton_solve(const VectorFn& g, const Eigen::VectorXd& x0,
                          const NewtonOptions& opts) {
    NewtonResult res;
    res.x = x0;
    res.residual = g(x0);
    double norm = res.residual.lpNorm<Eigen::Infinity>();

    for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
        if (norm < opts.residual_tolerance) {
            res.converged = true;
            return res;
        }
        const Eigen::MatrixXd jac = fd_jacobian(g, res.x, opts.fd_scale);
        const Eigen::VectorXd dir = jac.fullPivLu().solve(-res.residual);
        if (!dir.allFinite()) {
            throw Singular("Newton step failed: singular Jacobian of the trace equations");
        }

        double step = 1.0;
        bool accepted = false;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            const Eigen::VectorXd x_try = res.x + step * dir;
            if (!opts.admissible || opts.admissible(x_try)) {
                const Eigen::VectorXd r_try = g(x_try);
                const double n_try = r_try.lpNorm<Eigen::Infinity>();
                if (r_try.allFinite() && (n_try < norm || h == opts.max_halvings)) {
                    res.x = x_try;
                    res.residual = r_try;
                    norm = n_try;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) {
            throw BadParam("Newton step could not reach an admissible point after " +
                           std::to_string(opts.max_halvings) + " halvings");
        }
    }
    res.converged = norm < opts.residual_tolerance;
    return res;
}

}  // namespace lexee
