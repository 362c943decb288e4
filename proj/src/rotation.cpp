#include "dwclust/rotation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dwclust {

namespace {

Matrix regularized(const Matrix& cov, const RegularizationConfig& reg) {
    return cov + reg.sigma_n_sq * Matrix::Identity(cov.rows(), cov.cols());
}

}  // namespace

RotationSet diagonalize(const ClusterModel& model, const RegularizationConfig& reg) {
    reg.validate();
    const Index j = model.n_clusters();
    const Index d = model.covariances.empty() ? 0 : model.covariances.front().rows();
    RotationSet rs;
    rs.rotations.resize(static_cast<std::size_t>(j));
    rs.rotated_variances.resize(j, d);
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        SymmetricEigen eig;
        try {
            eig = jacobi_eigen(regularized(model.covariances[slot], reg));
        } catch (const NumericError& e) {
            throw NumericError("cluster " + std::to_string(i) + ": " + e.what());
        }
        rs.rotations[slot] = eig.vectors;
        rs.rotated_variances.row(i) = eig.values.cwiseMax(0.0).transpose();
    }
    return rs;
}

RotationSet rotate_with(const ClusterModel& model, std::vector<Matrix> rotations,
                        const RegularizationConfig& reg) {
    reg.validate();
    const Index j = model.n_clusters();
    if (static_cast<Index>(rotations.size()) != j)
        throw ConfigError("rotate_with: one rotation per cluster required");
    const Index d = rotations.empty() ? 0 : rotations.front().rows();
    RotationSet rs;
    rs.rotations = std::move(rotations);
    rs.rotated_variances.resize(j, d);
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        const Matrix& a = rs.rotations[slot];
        const Matrix b = a * regularized(model.covariances[slot], reg) * a.transpose();
        rs.rotated_variances.row(i) = b.diagonal().cwiseMax(0.0).transpose();
    }
    return rs;
}

BetaWeights beta_from_variances(const RotationSet& rs, const RegularizationConfig& reg) {
    BetaWeights w;
    w.beta = rs.rotated_variances.unaryExpr(
        [&](double s) { return 1.0 / std::max(s, reg.variance_floor); });
    return w;
}

double hadamard_slack(const ClusterModel& model, const RotationSet& candidate,
                      const RegularizationConfig& reg) {
    reg.validate();
    double slack = 0.0;
    for (Index i = 0; i < model.n_clusters(); ++i) {
        const auto slot = static_cast<std::size_t>(i);
        const Matrix& a = candidate.rotations.at(slot);
        if (orthonormality_error(a) > 1e-8)
            throw ConfigError("hadamard_slack: rotation " + std::to_string(i) + " is not orthonormal");
        const double p = model.proportions(i);
        if (p == 0.0) continue;
        const Matrix s = regularized(model.covariances[slot], reg);
        const Matrix b = a * s * a.transpose();
        double diag_sum = 0.0;
        for (Index k = 0; k < b.rows(); ++k) diag_sum += std::log(std::max(b(k, k), reg.variance_floor));
        slack += p * (diag_sum - log_det_floored(s, reg.variance_floor));
    }
    return slack;
}

}  // namespace dwclust
