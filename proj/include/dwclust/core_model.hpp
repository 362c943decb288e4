#ifndef DWCLUST_CORE_MODEL_HPP
#define DWCLUST_CORE_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dwclust/errors.hpp"
#include "dwclust/linalg.hpp"

namespace dwclust {

// N x D sample matrix, row n is x_n. Construction validates finiteness.
class Dataset {
public:
    Dataset() = default;
    explicit Dataset(Matrix samples);

    const Matrix& samples() const { return samples_; }
    Index n_samples() const { return samples_.rows(); }
    Index dim() const { return samples_.cols(); }

    Dataset subset(const std::vector<Index>& rows) const;

private:
    Matrix samples_;
};

// Partition of {0..N-1} into K non-empty host index sets.
struct ShardLayout {
    std::vector<std::vector<Index>> shards;

    int n_hosts() const { return static_cast<int>(shards.size()); }
    // Throws ConfigError unless the shards partition {0..n_total-1} exactly.
    void validate(Index n_total) const;
};

// Soft memberships; a row-stochastic N x J matrix when valid.
struct AssignmentMatrix {
    Matrix a;

    Index n_rows() const { return a.rows(); }
    Index n_clusters() const { return a.cols(); }
};

struct ClusterModel {
    Vector proportions;
    std::vector<Vector> means;
    std::vector<Matrix> covariances;
    // empty[i] marks a cluster whose total assignment mass is zero; its mean
    // and covariance are zero and its proportion is 0.
    std::vector<bool> empty;

    Index n_clusters() const { return proportions.size(); }
    bool has_empty_cluster() const;
};

struct RegularizationConfig {
    double sigma_n_sq = 0.0;
    double variance_floor = 1e-12;

    void validate() const;
};

// Natural-log entropy with 0 log 0 = 0. Rejects negative entries or a sum
// away from 1 by more than 1e-9.
double entropy(const Vector& p);

ClusterModel mixture_moments(const Dataset& data, const AssignmentMatrix& a);

// Per-cluster sufficient statistics sum_n a_ni, sum_n a_ni x_n and
// sum_n a_ni x_n x_n^T. Additive across hosts.
struct MomentStats {
    Vector mass;
    std::vector<Vector> first;
    std::vector<Matrix> second;

    static MomentStats zeros(Index n_clusters, Index dim);
    MomentStats& operator+=(const MomentStats& other);
};

MomentStats moment_stats(const Matrix& samples, const Matrix& a);
ClusterModel model_from_stats(const MomentStats& stats, Index n_total);

// 2 H(p) + sum_i p_i log det(Sigma_i + sigma_n^2 I). Clusters with p_i = 0
// contribute nothing to the log-det sum.
double coding_objective(const ClusterModel& model, const RegularizationConfig& reg);

struct AssignmentDiagnostics {
    bool ok = true;
    double max_row_deviation = 0.0;
    Index worst_row = -1;
    double min_entry = 0.0;
    double max_entry = 0.0;
    Vector cluster_mass;
};

AssignmentDiagnostics validate_assignment(const AssignmentMatrix& a, double tol = 1e-9);

// CSV: one row per sample, numeric columns. `has_header` skips the first line.
Matrix read_csv_matrix(const std::string& path, bool has_header = false);
void write_csv_matrix(const std::string& path, const Matrix& m);
std::vector<int> read_labels(const std::string& path);
void write_labels(const std::string& path, const std::vector<int>& labels);

// Fixed 17-significant-digit formatting shared by all text outputs.
std::string format_double(double v);

}  // namespace dwclust

#endif  // DWCLUST_CORE_MODEL_HPP
