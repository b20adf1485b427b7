#include "lexee/covariance.hpp"

#include <cmath>
#include <stdexcept>

#include "lexee/errors.hpp"

namespace lexee {

namespace {

void check_variance(double v, const std::string& what, bool allow_zero) {
    if (allow_zero ? (v < 0.0) : (v <= 0.0)) {
        throw BadParam(what + " must be " + (allow_zero ? "non-negative" : "positive") +
                       ", got " + std::to_string(v));
    }
}

void check_correlation(double rho, const std::string& what) {
    if (!(rho > -1.0 && rho < 1.0)) {
        throw BadParam(what + " must lie strictly inside (-1, 1), got " + std::to_string(rho));
    }
}

void check_positive_definite(const Eigen::MatrixXd& m, const std::string& what) {
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) {
        throw BadParam(what + " is not positive definite at these parameters");
    }
}

int block_distance(const std::vector<int>& block, int a, int b) {
    int pa = -1, pb = -1;
    for (int i = 0; i < static_cast<int>(block.size()); ++i) {
        if (block[i] == a) pa = i;
        if (block[i] == b) pb = i;
    }
    return std::abs(pa - pb);
}

}  // namespace

std::string cov_kind_name(CovKind kind) {
    switch (kind) {
        case CovKind::Independence: return "independence";
        case CovKind::CS: return "cs";
        case CovKind::CSH: return "csh";
        case CovKind::AR1: return "ar1";
        case CovKind::HAR1: return "har1";
        case CovKind::Unstructured: return "unstructured";
        case CovKind::Diagonal: return "diagonal";
        case CovKind::DiagonalAr1Blocks: return "diagonal_ar1_blocks";
    }
    throw std::logic_error("unreachable covariance kind");
}

CovKind cov_kind_from_name(const std::string& name) {
    if (name == "independence") return CovKind::Independence;
    if (name == "cs") return CovKind::CS;
    if (name == "csh") return CovKind::CSH;
    if (name == "ar1") return CovKind::AR1;
    if (name == "har1") return CovKind::HAR1;
    if (name == "unstructured") return CovKind::Unstructured;
    if (name == "diagonal") return CovKind::Diagonal;
    if (name == "diagonal_ar1_blocks") return CovKind::DiagonalAr1Blocks;
    throw BadParam("unknown covariance structure '" + name + "'");
}

int cov_param_count(const CovStructure& s) {
    const int n = s.dim;
    switch (s.kind) {
        case CovKind::Independence: return 1;
        case CovKind::CS: return 2;
        case CovKind::CSH: return n + 1;
        case CovKind::AR1: return 2;
        case CovKind::HAR1: return n + 1;
        case CovKind::Unstructured: return n * (n + 1) / 2;
        case CovKind::Diagonal: return n;
        case CovKind::DiagonalAr1Blocks: return n + static_cast<int>(s.blocks.size());
    }
    throw std::logic_error("unreachable covariance kind");
}

std::vector<std::string> cov_param_names(const CovStructure& s, const std::string& prefix) {
    std::vector<std::string> names;
    const int n = s.dim;
    switch (s.kind) {
        case CovKind::Independence:
            names.push_back(prefix + "sigma2");
            break;
        case CovKind::CS:
            names.push_back(prefix + "sigma2");
            names.push_back(prefix + "sigma_w2");
            break;
        case CovKind::CSH:
            for (int j = 0; j < n; ++j) names.push_back(prefix + "v[" + std::to_string(j + 1) + "]");
            names.push_back(prefix + "sigma_w2");
            break;
        case CovKind::AR1:
            names.push_back(prefix + "sigma2");
            names.push_back(prefix + "rho");
            break;
        case CovKind::HAR1:
            for (int j = 0; j < n; ++j) names.push_back(prefix + "v[" + std::to_string(j + 1) + "]");
            names.push_back(prefix + "rho");
            break;
        case CovKind::Unstructured:
            for (int i = 0; i < n; ++i)
                for (int j = 0; j <= i; ++j)
                    names.push_back(prefix + "[" + std::to_string(i + 1) + "," +
                                    std::to_string(j + 1) + "]");
            break;
        case CovKind::Diagonal:
            for (int j = 0; j < n; ++j) names.push_back(prefix + "v[" + std::to_string(j + 1) + "]");
            break;
        case CovKind::DiagonalAr1Blocks:
            for (int j = 0; j < n; ++j) names.push_back(prefix + "v[" + std::to_string(j + 1) + "]");
            for (int b = 0; b < static_cast<int>(s.blocks.size()); ++b)
                names.push_back(prefix + "rho[" + std::to_string(b + 1) + "]");
            break;
    }
    return names;
}

CovMatrices build_cov(const CovStructure& s, const Eigen::VectorXd& params, bool with_derivs) {
    const int n = s.dim;
    if (n < 1) throw BadParam("covariance dimension must be at least 1");
    if (params.size() != cov_param_count(s)) {
        throw BadParam("covariance '" + cov_kind_name(s.kind) + "' of dimension " +
                       std::to_string(n) + " takes " + std::to_string(cov_param_count(s)) +
                       " parameters, got " + std::to_string(params.size()));
    }

    CovMatrices out;
    out.value = Eigen::MatrixXd::Zero(n, n);
    auto deriv = [&](int k) -> Eigen::MatrixXd& { return out.derivs[k]; };
    if (with_derivs) out.derivs.assign(params.size(), Eigen::MatrixXd::Zero(n, n));

    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n, n);

    switch (s.kind) {
        case CovKind::Independence: {
            check_variance(params[0], "sigma2", false);
            out.value = params[0] * Eigen::MatrixXd::Identity(n, n);
            if (with_derivs) deriv(0) = Eigen::MatrixXd::Identity(n, n);
            break;
        }
        case CovKind::CS: {
            const double sigma2 = params[0], sigma_w2 = params[1];
            check_variance(sigma2, "sigma2", false);
            // sigma_w2 is a shared covariance: it may be zero or slightly
            // negative as long as the matrix stays positive definite.
            if (sigma2 + n * sigma_w2 <= 0.0) {
                throw BadParam("compound symmetry needs sigma2 + n*sigma_w2 > 0");
            }
            out.value = sigma2 * Eigen::MatrixXd::Identity(n, n) + sigma_w2 * ones;
            if (with_derivs) {
                deriv(0) = Eigen::MatrixXd::Identity(n, n);
                deriv(1) = ones;
            }
            break;
        }
        case CovKind::CSH: {
            const double sigma_w2 = params[n];
            for (int j = 0; j < n; ++j) {
                check_variance(params[j], "v[" + std::to_string(j + 1) + "]", false);
            }
            out.value = Eigen::MatrixXd(params.head(n).asDiagonal()) + sigma_w2 * ones;
            check_positive_definite(out.value, "heterogeneous compound symmetry");
            if (with_derivs) {
                for (int j = 0; j < n; ++j) deriv(j)(j, j) = 1.0;
                deriv(n) = ones;
            }
            break;
        }
        case CovKind::AR1: {
            const double sigma2 = params[0], rho = params[1];
            check_variance(sigma2, "sigma2", false);
            check_correlation(rho, "rho");
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    const int d = std::abs(i - j);
                    out.value(i, j) = sigma2 * std::pow(rho, d);
                    if (with_derivs) {
                        deriv(0)(i, j) = std::pow(rho, d);
                        deriv(1)(i, j) = (d == 0) ? 0.0 : sigma2 * d * std::pow(rho, d - 1);
                    }
                }
            }
            break;
        }
        case CovKind::HAR1: {
            const double rho = params[n];
            check_correlation(rho, "rho");
            for (int j = 0; j < n; ++j) {
                check_variance(params[j], "v[" + std::to_string(j + 1) + "]", false);
            }
            Eigen::VectorXd sd = params.head(n).array().sqrt();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < n; ++j) {
                    const int d = std::abs(i - j);
                    out.value(i, j) = std::pow(rho, d) * sd[i] * sd[j];
                }
            }
            if (with_derivs) {
                for (int k = 0; k < n; ++k) {
                    for (int i = 0; i < n; ++i) {
                        for (int j = 0; j < n; ++j) {
                            const int d = std::abs(i - j);
                            if (i == k && j == k) {
                                deriv(k)(i, j) = 1.0;
                            } else if (i == k) {
                                deriv(k)(i, j) = std::pow(rho, d) * sd[j] / (2.0 * sd[k]);
                            } else if (j == k) {
                                deriv(k)(i, j) = std::pow(rho, d) * sd[i] / (2.0 * sd[k]);
                            }
                        }
                    }
                }
                for (int i = 0; i < n; ++i) {
                    for (int j = 0; j < n; ++j) {
                        const int d = std::abs(i - j);
                        deriv(n)(i, j) = (d == 0) ? 0.0 : d * std::pow(rho, d - 1) * sd[i] * sd[j];
                    }
                }
            }
            break;
        }
        case CovKind::Unstructured: {
            int k = 0;
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j <= i; ++j, ++k) {
                    out.value(i, j) = params[k];
                    out.value(j, i) = params[k];
                    if (with_derivs) {
                        deriv(k)(i, j) = 1.0;
                        deriv(k)(j, i) = 1.0;
                    }
                }
            }
            check_positive_definite(out.value, "unstructured covariance");
            break;
        }
        case CovKind::Diagonal: {
            for (int j = 0; j < n; ++j) {
                check_variance(params[j], "v[" + std::to_string(j + 1) + "]", true);
                out.value(j, j) = params[j];
                if (with_derivs) deriv(j)(j, j) = 1.0;
            }
            break;
        }
        case CovKind::DiagonalAr1Blocks: {
            for (int j = 0; j < n; ++j) {
                check_variance(params[j], "v[" + std::to_string(j + 1) + "]", true);
                out.value(j, j) = params[j];
                if (with_derivs) deriv(j)(j, j) = 1.0;
            }
            Eigen::VectorXd sd = params.head(n).array().sqrt();
            for (int b = 0; b < static_cast<int>(s.blocks.size()); ++b) {
                const auto& block = s.blocks[b];
                const double rho = params[n + b];
                check_correlation(rho, "rho[" + std::to_string(b + 1) + "]");
                for (int a : block) {
                    for (int c : block) {
                        if (a == c) continue;
                        const int d = block_distance(block, a, c);
                        out.value(a, c) = std::pow(rho, d) * sd[a] * sd[c];
                        if (with_derivs) {
                            deriv(n + b)(a, c) = d * std::pow(rho, d - 1) * sd[a] * sd[c];
                            if (sd[a] > 0.0)
                                deriv(a)(a, c) = std::pow(rho, d) * sd[c] / (2.0 * sd[a]);
                            if (sd[c] > 0.0)
                                deriv(c)(a, c) = std::pow(rho, d) * sd[a] / (2.0 * sd[c]);
                        }
                    }
                }
            }
            break;
        }
    }

    return out;
}

bool cov_params_admissible(const CovStructure& s, const Eigen::VectorXd& params) {
    try {
        (void)build_cov(s, params, /*with_derivs=*/false);
        return true;
    } catch (const BadParam&) {
        return false;
    }
}

}  // namespace lexee
