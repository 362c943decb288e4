#ifndef DWCLUST_TESTS_HELPERS_HPP
#define DWCLUST_TESTS_HELPERS_HPP

#include <future>
#include <random>
#include <regex>
#include <string>
#include <thread>

#include "dwclust/rotation.hpp"
#include "dwclust/transport.hpp"

namespace helpers {

using dwclust::Index;
using dwclust::Matrix;
using dwclust::Vector;

inline dwclust::SolveParams identity_params(Index j, Index d, Index n_total, Index k, int round = 1) {
    dwclust::SolveParams p;
    p.round_id = round;
    p.rotations.rotations.assign(static_cast<std::size_t>(j), Matrix::Identity(d, d));
    p.rotations.rotated_variances = Matrix::Ones(j, d);
    p.beta.beta = Matrix::Ones(j, d);
    p.proportions_target = Vector::Constant(j, 1.0 / static_cast<double>(j));
    p.duals = dwclust::DualVariables(j, k, d);
    p.n_total = n_total;
    return p;
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
    return m;
}

struct MicroInstance {
    dwclust::RotatedShard cache;
    dwclust::SolveParams params;
    Index host = 0;
    Matrix warm;
};

// Random host subproblem with at most 8 samples, J = 2, up to 3 hosts and
// multipliers spanning several magnitudes.
inline MicroInstance random_micro(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> n_dist(1, 8), d_dist(1, 3), k_dist(1, 3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Index j = 2;
    const Index n = n_dist(rng), d = d_dist(rng), k = k_dist(rng);
    Matrix x(n, d);
    for (Index r = 0; r < n; ++r)
        for (Index c = 0; c < d; ++c) x(r, c) = 5.0 * normal(rng) + (unif(rng) < 0.5 ? 8.0 : -3.0);
    dwclust::RotationSet rs;
    for (Index i = 0; i < j; ++i) rs.rotations.push_back(dwclust::random_orthonormal(d, rng));
    rs.rotated_variances = Matrix::Ones(j, d);

    MicroInstance inst;
    inst.cache = dwclust::transform_shard(x, rs);
    inst.params.rotations = rs;
    inst.params.beta.beta = Matrix(j, d);
    for (Index i = 0; i < j; ++i)
        for (Index c = 0; c < d; ++c) inst.params.beta.beta(i, c) = 0.05 + 3.0 * unif(rng);
    const double p0 = 0.2 + 0.6 * unif(rng);
    inst.params.proportions_target = Vector(j);
    inst.params.proportions_target << p0, 1.0 - p0;
    inst.params.n_total = n + static_cast<Index>(10 * unif(rng));
    inst.params.duals = dwclust::DualVariables(j, k, d);
    const double scale = std::pow(10.0, -2.0 + 3.0 * unif(rng));
    for (double& v : inst.params.duals.mu_flat()) v = scale * normal(rng);
    for (Index i = 0; i < j; ++i) inst.params.duals.p()(i) = scale * normal(rng);
    inst.host = static_cast<Index>(unif(rng) * static_cast<double>(k));
    inst.warm = Matrix::Zero(n, j);
    for (Index r = 0; r < n; ++r) inst.warm(r, unif(rng) < 0.5 ? 0 : 1) = 1.0;
    return inst;
}

// Encoded length with every number token replaced by one digit, so sizes
// compare message structure rather than digit counts of particular values.
inline std::size_t structural_size(const std::string& line) {
    static const std::regex number(R"(-?\d+(\.\d+)?([eE][-+]?\d+)?)");
    return std::regex_replace(line, number, "0").size();
}

// serve_host on a background thread bound to an ephemeral port.
class TcpHost {
public:
    explicit TcpHost(const Matrix& shard) {
        std::promise<int> port;
        auto ready = port.get_future();
        thread_ = std::thread([shard, p = std::move(port)]() mutable {
            try {
                dwclust::serve_host(shard, "127.0.0.1:0", [&](int value) { p.set_value(value); });
            } catch (...) {
                try {
                    p.set_exception(std::current_exception());
                } catch (...) {
                }
            }
        });
        port_ = ready.get();
    }
    ~TcpHost() {
        if (thread_.joinable()) thread_.join();
    }
    TcpHost(const TcpHost&) = delete;
    TcpHost& operator=(const TcpHost&) = delete;

    std::string address() const { return "127.0.0.1:" + std::to_string(port_); }

private:
    std::thread thread_;
    int port_ = 0;
};

}  // namespace helpers

#endif
