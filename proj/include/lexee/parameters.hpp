#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "lexee/model_spec.hpp"

namespace lexee {

enum class ParamKind {
    Linear,       // unconstrained as-is
    Variance,     // positive; log scale when unconstrained
    Correlation,  // inside (-1, 1); atanh scale when unconstrained
    Block,        // member of a jointly transformed group
};

struct ParamInfo {
    std::string name;
    ParamKind kind = ParamKind::Linear;
};

// Materialized outcome-regression parameters.
struct Theta1View {
    double beta0 = 0.0;
    Eigen::VectorXd beta;       // one slot per outcome latent, in spec order
    Eigen::VectorXd kappa;      // length q
    Eigen::VectorXd beta_full;  // length l, zeros for latents the outcome skips
};

// Materialized exposure-side parameters, both the coefficient matrices and
// the assembled covariance matrices.
struct Theta3View {
    Eigen::VectorXd nu;          // p
    Eigen::MatrixXd lambda;      // p x l
    Eigen::MatrixXd k;           // p x r
    Eigen::VectorXd alpha;       // l
    Eigen::MatrixXd gamma1;      // l x l
    Eigen::MatrixXd gamma2;      // l x r
    Eigen::VectorXd delta_params;  // full builder params for omega_delta
    Eigen::VectorXd psi_params;    // full builder params for psi
    Eigen::MatrixXd omega_delta;   // p x p
    Eigen::MatrixXd psi;           // l x l
};

// Flat parameter bookkeeping for one model: the order, names and kinds of
// every free parameter, the theta1/theta2/theta3 slice boundaries, and the
// bijection between the admissible region and the unconstrained space.
//
// Packing order: beta0, beta (outcome latents), kappa | outcome covariance
// parameters | free nu, free lambda (row-major), free k (row-major), alpha,
// free gamma1 (row-major), free gamma2 (row-major), free measurement-error
// variances, block correlations, psi parameters (lower triangle row-major
// when unstructured).
class ParamLayout {
  public:
    // n_occasions is the largest per-subject outcome length the layout must
    // support; outcome covariance parameters are sized to it.
    static std::shared_ptr<const ParamLayout> build(const ModelSpec& spec, int n_occasions);

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] int n_occasions() const { return n_occasions_; }

    [[nodiscard]] int size() const { return static_cast<int>(params_.size()); }
    [[nodiscard]] int theta1_count() const { return theta1_count_; }
    [[nodiscard]] int theta2_count() const { return theta2_count_; }
    [[nodiscard]] int theta3_count() const { return theta3_count_; }
    [[nodiscard]] int theta2_offset() const { return theta1_count_; }
    [[nodiscard]] int theta3_offset() const { return theta1_count_ + theta2_count_; }

    [[nodiscard]] const std::vector<ParamInfo>& params() const { return params_; }
    [[nodiscard]] const std::string& name(int i) const { return params_[i].name; }
    [[nodiscard]] int index_of(const std::string& name) const;  // -1 when absent

    // Bijection between admissible natural values and R^k. to_unconstrained
    // throws BadParam off the admissible region; from_unconstrained always
    // lands inside it (up to outcome-covariance families whose admissibility
    // additionally depends on the assembled matrix).
    [[nodiscard]] Eigen::VectorXd to_unconstrained(const Eigen::VectorXd& natural) const;
    [[nodiscard]] Eigen::VectorXd from_unconstrained(const Eigen::VectorXd& u) const;

    // A neutral admissible point: linear parameters 0, variances 1,
    // correlations 0, identity covariance blocks, shared covariances 0.25.
    [[nodiscard]] Eigen::VectorXd neutral_values() const;

    [[nodiscard]] Theta1View theta1_view(const Eigen::VectorXd& values) const;
    [[nodiscard]] Eigen::VectorXd theta2(const Eigen::VectorXd& values) const;
    [[nodiscard]] Theta3View theta3_view(const Eigen::VectorXd& values) const;

    // Inverse of the view materializers; exact, used for round-trip checks
    // and for assembling parameter vectors from structured inputs.
    [[nodiscard]] Eigen::VectorXd flatten_theta1(const Theta1View& v) const;
    [[nodiscard]] Eigen::VectorXd flatten_theta3(const Theta3View& v) const;

    [[nodiscard]] CovStructure outcome_structure() const;
    [[nodiscard]] CovStructure delta_structure() const;
    [[nodiscard]] CovStructure psi_structure() const;

  private:
    ParamLayout() = default;

    enum class BlockType { Scalar, SpdVech, CsPair, CshGroup };
    struct TransformBlock {
        BlockType type = BlockType::Scalar;
        int offset = 0;
        int count = 1;
        int dim = 0;  // matrix dimension for SpdVech / group size context
        ParamKind scalar_kind = ParamKind::Linear;
    };

    void add_scalar(const std::string& name, ParamKind kind);
    void add_block(BlockType type, int count, int dim, const std::vector<std::string>& names);

    ModelSpec spec_;
    int n_occasions_ = 1;
    int theta1_count_ = 0, theta2_count_ = 0, theta3_count_ = 0;
    std::vector<ParamInfo> params_;
    std::vector<TransformBlock> blocks_;
};

// A parameter point bound to its layout.
struct ParamVector {
    std::shared_ptr<const ParamLayout> layout;
    Eigen::VectorXd values;

    [[nodiscard]] double operator[](int i) const { return values[i]; }
    [[nodiscard]] double at(const std::string& name) const;
};

}  // namespace lexee
