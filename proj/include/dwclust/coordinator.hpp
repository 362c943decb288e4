#ifndef DWCLUST_COORDINATOR_HPP
#define DWCLUST_COORDINATOR_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dwclust/local_solver.hpp"
#include "dwclust/protocol.hpp"

namespace dwclust {

class Transport;

enum class ProportionMode { fixed_uniform, optimize };
enum class RoundingMode { randomized, argmax };

struct CoordinatorConfig {
    Index n_clusters = 2;
    RegularizationConfig reg;
    int max_outer_rounds = 50;
    int dual_rounds = 30;              // T
    double step_size_initial = 1.0;    // alpha_0; alpha_t = alpha_0 / sqrt(t)
    double tol_objective = 1e-6;       // relative
    ProportionMode proportion_mode = ProportionMode::fixed_uniform;
    double proportion_step = 0.05;
    RoundingMode rounding_mode = RoundingMode::randomized;
    std::uint64_t seed = 0;
    int restarts = 3;
    // Fixed targets instead of uniform ones (fixed mode) or the starting
    // point (optimize mode).
    std::optional<Vector> proportions;

    void validate() const;
};

std::string to_string(ProportionMode m);
std::string to_string(RoundingMode m);
ProportionMode proportion_mode_from_string(const std::string& s);
RoundingMode rounding_mode_from_string(const std::string& s);
Json to_json(const CoordinatorConfig& c);

struct TraceRecord {
    int restart = 0;
    int round = 0;
    double primal = 0.0;    // coding objective of the primal held after the round
    double dual = 0.0;      // best dual bound of the round's surrogate
    double gap = 0.0;       // (best surrogate primal - dual) / (1 + |best surrogate primal|)
    bool committed = false; // whether the recovered candidate replaced the primal
};

struct ClusteringResult {
    std::vector<int> labels;
    AssignmentMatrix soft_assignments;
    ClusterModel model;
    double objective = 0.0;
    double surrogate_primal = 0.0;
    double dual_value = 0.0;
    double duality_gap_estimate = 0.0;
    int rounds_used = 0;
    int best_restart = 0;
    Vector proportions_target;
    std::vector<TraceRecord> trace;
};

// Runs the full decomposition against the hosts behind `transport`. When
// `layout` is given, assignments and labels are returned in dataset order;
// otherwise in host order (host 0's rows first).
ClusteringResult run_clustering(Transport& transport, const CoordinatorConfig& config,
                                const ShardLayout* layout = nullptr);

// Subgradient step on the multipliers. With a J x D `beta`, host k's
// mean-multiplier step is scaled by 2 beta_id max(mass_ki / N, 1e-6), the
// curvature of its mean term at this solve; empty means unit scale. The mean
// residual for host k is mu_hat_k - sum_k' rotated_first_k' / (p_i N).
// Returns the dual value sum_k f_lower_k - sum_i lambda_pi p_i at the
// multipliers the results were computed with.
double dual_step(DualVariables& duals, const std::vector<LocalSolveResult>& results, int t,
                 const CoordinatorConfig& config, const Vector& p_target, Index n_total,
                 const Matrix& beta = Matrix());

double step_size(const CoordinatorConfig& config, int t);

// Mean of the last `window` matrices of the history.
Matrix ergodic_average(const std::vector<Matrix>& history, int window);

// Per-host mass transfers that bring the summed cluster masses to `target`:
// flows[k](i, j) is the mass host k moves from cluster i to cluster j.
// Surplus clusters are paired with deficit clusters in index order and each
// transfer is split across hosts in proportion to their mass of the source.
std::vector<Matrix> mass_flows(const Matrix& host_mass, const Vector& target);

// Cost of holding each row in each cluster when repairing masses:
// c_ni = sum_d beta_id (y_nid - m_id)^2 with m the rotated penalty means.
Matrix repair_penalty(const RotatedShard& cache, const Matrix& beta, const Matrix& rotated_means);

// Moves flows(i, j) of mass from cluster i to cluster j, taking rows with the
// smallest penalty increase first (ties by row index).
void repair_masses(Matrix& a, const Matrix& flows, const Matrix& penalty);

// Single-matrix recovery: average the last `window` assignments of the
// history, then repair the cluster masses to p_i N exactly.
AssignmentMatrix recover_primal(const std::vector<Matrix>& history, int window,
                                const Vector& p_target, const Matrix& penalty);

// One projected-gradient step on the restricted optimum g*(p), with g*
// supplied by `evaluate`. Central differences move along e_i - 1/J so the
// probes stay on the simplex. The move is proportion_step * grad, shortened to
// length proportion_step when the gradient norm exceeds 1.
Vector optimize_proportions(const Vector& p, const std::function<double(const Vector&)>& evaluate,
                            const CoordinatorConfig& config);

// Euclidean projection onto {p : sum p = 1, p_i >= lower}.
Vector project_to_simplex(const Vector& v, double lower);

std::vector<int> round_assignments(const AssignmentMatrix& a, RoundingMode mode, std::uint64_t seed);

struct InitialState {
    AssignmentMatrix assignments;
    std::vector<Matrix> rotations;
};

// Rows drawn uniformly from the simplex; rotations orthonormalized from
// Gaussian matrices. Deterministic in the seed.
InitialState initialize_state(Index n_samples, Index dim, const CoordinatorConfig& config,
                              std::uint64_t seed);

// Result document (labels, model, objective/dual/gap trace, embedded config)
// and the CSV trace.
Json result_to_json(const ClusteringResult& r, const CoordinatorConfig& config,
                    const std::string& labels_path);
std::string trace_csv(const ClusteringResult& r);

}  // namespace dwclust

#endif  // DWCLUST_COORDINATOR_HPP
