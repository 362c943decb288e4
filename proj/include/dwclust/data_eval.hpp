#ifndef DWCLUST_DATA_EVAL_HPP
#define DWCLUST_DATA_EVAL_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dwclust/coordinator.hpp"
#include "dwclust/kernels.hpp"

namespace dwclust {

struct MixtureComponent {
    Vector mean;
    Matrix cov;
    Index count = 0;
};

struct MixtureSpec {
    std::vector<MixtureComponent> components;

    Index n_samples() const;
    Index dim() const;
    // Throws ConfigError unless shapes agree, counts are positive and every
    // covariance is symmetric PSD.
    void validate() const;
};

// {"components":[{"mean":[...],"cov":[[...]],"count":...}]}
MixtureSpec mixture_spec_from_json(const Json& j);
MixtureSpec read_mixture_spec(const std::string& path);
Json to_json(const MixtureSpec& spec);

// Zero-mean two-cluster setups with 1024 samples each; experiment 2 has a
// singular second covariance, experiment 3 shifts the second mean to (800, 800).
MixtureSpec experiment_spec(int experiment);

struct GeneratedData {
    Dataset data;
    std::vector<int> labels;
};

// Samples mean + V diag(sqrt(lambda)) z per component, components in order.
GeneratedData generate_mixture(const MixtureSpec& spec, std::uint64_t seed);

enum class ShardPolicy { by_cluster, interleaved, fractions };
ShardPolicy shard_policy_from_string(const std::string& s);
std::string to_string(ShardPolicy p);

// by-cluster: host k gets component k (K must equal the number of labels).
// interleaved: sample n goes to host n mod K.
// fractions: host k gets share fractions[(k - c) mod K] of component c, as
// consecutive blocks with largest-remainder rounding.
ShardLayout shard_dataset(const std::vector<int>& labels, ShardPolicy policy, int n_hosts,
                          const std::vector<double>& fractions = {});

std::vector<Matrix> shard_matrices(const Dataset& data, const ShardLayout& layout);

// Smallest mismatch fraction over all relabelings of `predicted` (J <= 8).
double miss_rate(const std::vector<int>& predicted, const std::vector<int>& truth);

struct OracleResult {
    std::vector<int> labels;
    double objective = 0.0;
};

// Exhaustive minimum of the coding objective over hard labelings (J^N <= 1e6),
// optionally restricted to the given cluster sizes.
OracleResult brute_force_oracle(const Dataset& data, Index j, const RegularizationConfig& reg,
                                const std::optional<std::vector<Index>>& counts = std::nullopt,
                                kernels::Exec exec = kernels::Exec::parallel);

struct GapEntry {
    Index n = 0;
    double primal = 0.0;
    double dual = 0.0;
    double relative_gap = 0.0;
};

struct GapReport {
    std::vector<GapEntry> entries;
    std::string csv() const;
};

// For each size, scales the component counts to that total, generates data,
// shards it by cluster across K = 2 hosts (interleaved when the spec does not
// have two components) and runs the in-process pipeline.
GapReport duality_gap_probe(const MixtureSpec& spec, const std::vector<Index>& sizes,
                            const CoordinatorConfig& config, std::uint64_t seed);

struct EmResult {
    std::vector<int> labels;
    bool converged = false;
    std::vector<double> log_likelihood;
    std::string failure;  // empty unless the run broke down
};

// Textbook EM for a Gaussian mixture, without any covariance regularization.
// Starts from k-means++ means, the pooled covariance and uniform weights.
EmResult em_baseline(const Dataset& data, Index j, std::uint64_t seed, int max_iters);

}  // namespace dwclust

#endif  // DWCLUST_DATA_EVAL_HPP
