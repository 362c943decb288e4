#ifndef DWCLUST_ROTATION_HPP
#define DWCLUST_ROTATION_HPP

#include <vector>

#include "dwclust/core_model.hpp"

namespace dwclust {

// Per-cluster orthonormal A_i and sigma_id^2 = diag(A_i (Sigma_i + sigma_n^2 I) A_i^T).
struct RotationSet {
    std::vector<Matrix> rotations;
    Matrix rotated_variances;  // J x D

    Index n_clusters() const { return static_cast<Index>(rotations.size()); }
    Index dim() const { return rotations.empty() ? 0 : rotations.front().rows(); }
};

// Linearization weights beta_id = 1 / max(sigma_id^2, floor).
struct BetaWeights {
    Matrix beta;  // J x D
};

// Eigenbasis of each regularized covariance; eigenvalues descending.
RotationSet diagonalize(const ClusterModel& model, const RegularizationConfig& reg);

// Keeps the given rotations and evaluates the diagonal of A_i Sigma_reg A_i^T.
RotationSet rotate_with(const ClusterModel& model, std::vector<Matrix> rotations,
                        const RegularizationConfig& reg);

BetaWeights beta_from_variances(const RotationSet& rs, const RegularizationConfig& reg);

// sum_i p_i [sum_d log diag(A_i S_i A_i^T)_d - log det S_i] with S_i the
// regularized covariance. Non-negative by Hadamard's inequality, zero at the
// eigenbasis. Throws ConfigError if a rotation is not orthonormal.
double hadamard_slack(const ClusterModel& model, const RotationSet& candidate,
                      const RegularizationConfig& reg);

}  // namespace dwclust

#endif  // DWCLUST_ROTATION_HPP
