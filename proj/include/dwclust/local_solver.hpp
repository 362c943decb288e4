#ifndef DWCLUST_LOCAL_SOLVER_HPP
#define DWCLUST_LOCAL_SOLVER_HPP

#include <optional>
#include <vector>

#include "dwclust/core_model.hpp"
#include "dwclust/rotation.hpp"

namespace dwclust {

// Lagrange multipliers: lambda_mu indexed (cluster i, host k, coordinate d),
// lambda_p indexed by cluster.
class DualVariables {
public:
    DualVariables() = default;
    DualVariables(Index n_clusters, Index n_hosts, Index dim);

    Index n_clusters() const { return n_clusters_; }
    Index n_hosts() const { return n_hosts_; }
    Index dim() const { return dim_; }

    double& mu(Index i, Index k, Index d) { return lambda_mu_[offset(i, k, d)]; }
    double mu(Index i, Index k, Index d) const { return lambda_mu_[offset(i, k, d)]; }
    const std::vector<double>& mu_flat() const { return lambda_mu_; }
    std::vector<double>& mu_flat() { return lambda_mu_; }

    Vector& p() { return lambda_p_; }
    const Vector& p() const { return lambda_p_; }

    // J x D matrix of sum over hosts of lambda_mu.
    Matrix mu_host_sum() const;
    bool all_finite() const;

private:
    std::size_t offset(Index i, Index k, Index d) const {
        return static_cast<std::size_t>((i * n_hosts_ + k) * dim_ + d);
    }

    Index n_clusters_ = 0;
    Index n_hosts_ = 0;
    Index dim_ = 0;
    std::vector<double> lambda_mu_;
    Vector lambda_p_;
};

// Per-(cluster, rotated coordinate) bounds on the local mean guesses.
struct MeanBox {
    Matrix lo;  // J x D
    Matrix hi;  // J x D
};

struct SolveParams {
    int round_id = 0;
    RotationSet rotations;
    BetaWeights beta;
    Vector proportions_target;
    DualVariables duals;
    Index n_total = 0;
    std::optional<MeanBox> box;  // global box; shard-local box when absent

    void validate(Index n_clusters, Index dim) const;
};

// Shard rotated once per rotation set: rotated[i](n, d) = (A_i x_n)(d).
struct RotatedShard {
    Matrix raw;
    std::vector<Matrix> rotated;
    MeanBox box;

    Index size() const { return raw.rows(); }
    Index n_clusters() const { return static_cast<Index>(rotated.size()); }
    Index dim() const { return raw.cols(); }
    // J x D matrix of the n-th sample under every cluster rotation.
    Matrix row(Index n) const;
};

RotatedShard transform_shard(const Matrix& shard, const RotationSet& rotations);

struct LocalSolveResult {
    double f_star = 0.0;
    double f_lower = 0.0;  // certified lower bound on the subproblem minimum
    Matrix local_assignments;          // |N_k| x J
    Matrix mu_hat;                     // J x D
    Vector cluster_mass;               // J
    Matrix rotated_first_moment;       // J x D
    std::vector<Vector> raw_first_moment;
    std::vector<Matrix> raw_second_moment;
    int sweeps = 0;
    double max_ascent = 0.0;  // largest objective increase seen across BCD steps
};

// Coefficient of a_ni in the host subproblem for this host's sample row
// (J x D rotated coordinates).
Vector assignment_costs(const Matrix& rotated_row, const SolveParams& params, const Matrix& mu_hat,
                        Index host_id);

// Host subproblem objective at (a, mu_hat), all four terms.
double subproblem_objective(const RotatedShard& cache, const SolveParams& params, Index host_id,
                            const Matrix& a, const Matrix& mu_hat);

// Block-coordinate descent on (a, mu_hat) from the warm assignment plus a
// restart from the warm assignment's shard means, each polished by
// single-sample moves. Shards with at most 4096 labelings are also solved by
// enumeration, larger ones by branch and bound over the mean box; either wins
// only when strictly better than descent. f_lower certifies the minimum.
LocalSolveResult solve_local(const RotatedShard& cache, const SolveParams& params, Index host_id,
                             const Matrix& warm_assignments);

struct LocalDualTerms {
    Matrix g_mu;   // mu_hat - rotated_first_moment / (p_i N)
    Vector g_mass; // cluster_mass / N
};

LocalDualTerms local_dual_terms(const LocalSolveResult& result, const SolveParams& params);

}  // namespace dwclust

#endif  // DWCLUST_LOCAL_SOLVER_HPP
