#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace lexee {

using Mask = std::vector<bool>;

// Bit key for a surrogate observation pattern; supports up to 64 surrogates.
[[nodiscard]] inline std::uint64_t mask_key(const Mask& m) {
    std::uint64_t key = 0;
    for (std::size_t j = 0; j < m.size(); ++j)
        if (m[j]) key |= (std::uint64_t{1} << j);
    return key;
}

[[nodiscard]] inline int mask_count(const Mask& m) {
    int n = 0;
    for (bool b : m)
        if (b) ++n;
    return n;
}

struct SubjectData {
    std::string id;
    Eigen::VectorXd x;   // length p; entries under a false mask are ignored
    Mask x_mask;         // length p
    Eigen::VectorXd w;   // length r
    Eigen::MatrixXd z;   // n_i x q occasion covariates
    Eigen::VectorXd y;   // length n_i
    Eigen::VectorXd u_true;  // size 0 unless generated data keeps the truth

    [[nodiscard]] int n_occasions() const { return static_cast<int>(y.size()); }
};

struct Dataset {
    std::vector<SubjectData> subjects;
    int p = 0;  // surrogates
    int r = 0;  // subject covariates
    int q = 0;  // occasion covariates

    [[nodiscard]] int n_subjects() const { return static_cast<int>(subjects.size()); }
    [[nodiscard]] int n_max() const {
        int n = 0;
        for (const auto& s : subjects) n = std::max(n, s.n_occasions());
        return n;
    }
};

}  // namespace lexee
