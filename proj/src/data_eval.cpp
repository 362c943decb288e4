#include "dwclust/data_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "dwclust/transport.hpp"

namespace dwclust {

Index MixtureSpec::n_samples() const {
    Index n = 0;
    for (const MixtureComponent& c : components) n += c.count;
    return n;
}

Index MixtureSpec::dim() const { return components.empty() ? 0 : components.front().mean.size(); }

void MixtureSpec::validate() const {
    if (components.empty()) throw ConfigError("mixture spec has no components");
    const Index d = dim();
    if (d < 1) throw ConfigError("mixture spec has zero-dimensional means");
    for (std::size_t c = 0; c < components.size(); ++c) {
        const MixtureComponent& m = components[c];
        const std::string where = "component " + std::to_string(c);
        if (m.mean.size() != d || m.cov.rows() != d || m.cov.cols() != d)
            throw ConfigError(where + ": mean and covariance shapes disagree");
        if (m.count < 1) throw ConfigError(where + ": count must be positive");
        if (!m.mean.allFinite() || !m.cov.allFinite()) throw ConfigError(where + ": non-finite entries");
        const double scale = std::max(1.0, m.cov.cwiseAbs().maxCoeff());
        if ((m.cov - m.cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
            throw ConfigError(where + ": covariance is not symmetric");
        const SymmetricEigen e = jacobi_eigen(m.cov);
        if (e.values.minCoeff() < -1e-9 * scale) throw ConfigError(where + ": covariance is not PSD");
    }
}

MixtureSpec mixture_spec_from_json(const Json& j) {
    MixtureSpec spec;
    try {
        const Json& comps = require(j, "components");
        if (!comps.is_array()) throw ConfigError("'components' must be an array");
        for (const Json& c : comps) {
            MixtureComponent m;
            m.mean = vector_from_json(require(c, "mean"), "mean");
            m.cov = matrix_from_json(require(c, "cov"), "cov");
            const Json& count = require(c, "count");
            if (!count.is_number_integer()) throw ConfigError("'count' must be an integer");
            m.count = count.get<Index>();
            spec.components.push_back(std::move(m));
        }
    } catch (const ProtocolError& e) {
        throw ConfigError(std::string("mixture spec: ") + e.what());
    }
    spec.validate();
    return spec;
}

MixtureSpec read_mixture_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return mixture_spec_from_json(j);
}

Json to_json(const MixtureSpec& spec) {
    Json comps = Json::array();
    for (const MixtureComponent& c : spec.components)
        comps.push_back(Json{{"mean", to_json(c.mean)}, {"cov", to_json(c.cov)}, {"count", c.count}});
    return Json{{"components", std::move(comps)}};
}

MixtureSpec experiment_spec(int experiment) {
    Matrix first(2, 2), second(2, 2);
    first << 80000, 52000, 52000, 35600;
    second << 192800, -118800, -118800, 74000;
    Vector shift = Vector::Zero(2);
    switch (experiment) {
        case 1:
            break;
        case 2:
            second << 192800, 0, 0, 0;
            break;
        case 3:
            shift << 800, 800;
            break;
        default:
            throw ConfigError("experiments are numbered 1 to 3");
    }
    MixtureSpec spec;
    spec.components.push_back({Vector::Zero(2), first, 1024});
    spec.components.push_back({shift, second, 1024});
    return spec;
}

GeneratedData generate_mixture(const MixtureSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Index d = spec.dim();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(spec.n_samples(), d);
    std::vector<int> labels;
    labels.reserve(static_cast<std::size_t>(x.rows()));
    Index row = 0;
    for (std::size_t c = 0; c < spec.components.size(); ++c) {
        const MixtureComponent& m = spec.components[c];
        const SymmetricEigen e = jacobi_eigen(m.cov);
        const Matrix factor = e.vectors.transpose() * e.values.cwiseMax(0.0).cwiseSqrt().asDiagonal();
        Vector z(d);
        for (Index s = 0; s < m.count; ++s, ++row) {
            for (Index r = 0; r < d; ++r) z(r) = normal(rng);
            x.row(row) = (m.mean + factor * z).transpose();
            labels.push_back(static_cast<int>(c));
        }
    }
    return {Dataset(std::move(x)), std::move(labels)};
}

ShardPolicy shard_policy_from_string(const std::string& s) {
    if (s == "by-cluster") return ShardPolicy::by_cluster;
    if (s == "interleaved") return ShardPolicy::interleaved;
    if (s == "fractions") return ShardPolicy::fractions;
    throw ConfigError("unknown shard policy '" + s + "'");
}

std::string to_string(ShardPolicy p) {
    switch (p) {
        case ShardPolicy::by_cluster:
            return "by-cluster";
        case ShardPolicy::interleaved:
            return "interleaved";
        case ShardPolicy::fractions:
            return "fractions";
    }
    return "";
}

namespace {

// Splits `total` into parts proportional to `weights` that sum to `total`;
// leftover units go to the largest remainders, lowest index first.
std::vector<Index> apportion(Index total, const std::vector<double>& weights) {
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<Index> parts(weights.size());
    std::vector<double> rem(weights.size());
    Index used = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const double exact = static_cast<double>(total) * weights[k] / sum;
        parts[k] = static_cast<Index>(std::floor(exact));
        rem[k] = exact - static_cast<double>(parts[k]);
        used += parts[k];
    }
    std::vector<std::size_t> order(weights.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
    for (std::size_t r = 0; used < total; ++r, ++used) ++parts[order[r % order.size()]];
    return parts;
}

}  // namespace

ShardLayout shard_dataset(const std::vector<int>& labels, ShardPolicy policy, int n_hosts,
                          const std::vector<double>& fractions) {
    if (n_hosts < 1) throw ConfigError("need at least one host");
    const auto n = static_cast<Index>(labels.size());
    if (n < n_hosts) throw ConfigError("fewer samples than hosts");
    const int n_labels = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    if (!labels.empty() && *std::min_element(labels.begin(), labels.end()) < 0)
        throw ConfigError("labels must be non-negative");
    ShardLayout layout;
    layout.shards.resize(static_cast<std::size_t>(n_hosts));
    switch (policy) {
        case ShardPolicy::by_cluster:
            if (n_labels != n_hosts)
                throw ConfigError("by-cluster sharding needs one host per label (" + std::to_string(n_labels) +
                                  " labels, " + std::to_string(n_hosts) + " hosts)");
            for (Index r = 0; r < n; ++r) layout.shards[static_cast<std::size_t>(labels[static_cast<std::size_t>(r)])].push_back(r);
            break;
        case ShardPolicy::interleaved:
            for (Index r = 0; r < n; ++r) layout.shards[static_cast<std::size_t>(r % n_hosts)].push_back(r);
            break;
        case ShardPolicy::fractions: {
            if (static_cast<int>(fractions.size()) != n_hosts)
                throw ConfigError("fractions policy needs one fraction per host");
            double sum = 0.0;
            for (double f : fractions) {
                if (!(f >= 0.0)) throw ConfigError("fractions must be non-negative");
                sum += f;
            }
            if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("fractions must sum to 1");
            for (int c = 0; c < n_labels; ++c) {
                std::vector<Index> members;
                for (Index r = 0; r < n; ++r)
                    if (labels[static_cast<std::size_t>(r)] == c) members.push_back(r);
                std::vector<double> shares(static_cast<std::size_t>(n_hosts));
                for (int k = 0; k < n_hosts; ++k)
                    shares[static_cast<std::size_t>(k)] = fractions[static_cast<std::size_t>(((k - c) % n_hosts + n_hosts) % n_hosts)];
                const std::vector<Index> parts = apportion(static_cast<Index>(members.size()), shares);
                std::size_t next = 0;
                for (int k = 0; k < n_hosts; ++k)
                    for (Index q = 0; q < parts[static_cast<std::size_t>(k)]; ++q)
                        layout.shards[static_cast<std::size_t>(k)].push_back(members[next++]);
            }
            for (auto& s : layout.shards) std::sort(s.begin(), s.end());
            break;
        }
    }
    layout.validate(n);
    return layout;
}

std::vector<Matrix> shard_matrices(const Dataset& data, const ShardLayout& layout) {
    layout.validate(data.n_samples());
    std::vector<Matrix> out;
    for (const auto& rows : layout.shards) out.push_back(data.subset(rows).samples());
    return out;
}

double miss_rate(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size()) throw ConfigError("label files differ in length");
    if (predicted.empty()) return 0.0;
    int j = 0;
    for (std::size_t n = 0; n < predicted.size(); ++n) {
        if (predicted[n] < 0 || truth[n] < 0) throw ConfigError("labels must be non-negative");
        j = std::max({j, predicted[n] + 1, truth[n] + 1});
    }
    if (j > 8) throw ConfigError("miss_rate supports at most 8 labels");
    std::vector<std::vector<long>> confusion(static_cast<std::size_t>(j), std::vector<long>(static_cast<std::size_t>(j), 0));
    for (std::size_t n = 0; n < predicted.size(); ++n)
        ++confusion[static_cast<std::size_t>(predicted[n])][static_cast<std::size_t>(truth[n])];
    std::vector<int> perm(static_cast<std::size_t>(j));
    std::iota(perm.begin(), perm.end(), 0);
    long best = 0;
    do {
        long hits = 0;
        for (int p = 0; p < j; ++p) hits += confusion[static_cast<std::size_t>(p)][static_cast<std::size_t>(perm[static_cast<std::size_t>(p)])];
        best = std::max(best, hits);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(static_cast<long>(predicted.size()) - best) / static_cast<double>(predicted.size());
}

OracleResult brute_force_oracle(const Dataset& data, Index j, const RegularizationConfig& reg,
                                const std::optional<std::vector<Index>>& counts, kernels::Exec exec) {
    const kernels::LabelingMinimum m = kernels::enumerate_labelings(data.samples(), j, reg, counts, exec);
    return {m.labels, m.objective};
}

std::string GapReport::csv() const {
    std::ostringstream out;
    out << "N,primal,dual,relative_gap\n";
    for (const GapEntry& e : entries)
        out << e.n << ',' << format_double(e.primal) << ',' << format_double(e.dual) << ','
            << format_double(e.relative_gap) << '\n';
    return out.str();
}

GapReport duality_gap_probe(const MixtureSpec& spec, const std::vector<Index>& sizes,
                            const CoordinatorConfig& config, std::uint64_t seed) {
    spec.validate();
    std::vector<Index> sorted = sizes;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> weights;
    for (const MixtureComponent& c : spec.components) weights.push_back(static_cast<double>(c.count));
    GapReport report;
    for (Index n : sorted) {
        MixtureSpec scaled = spec;
        const std::vector<Index> counts = apportion(n, weights);
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (counts[c] < 1) throw ConfigError("size " + std::to_string(n) + " leaves a component empty");
            scaled.components[c].count = counts[c];
        }
        const GeneratedData g = generate_mixture(scaled, seed);
        const ShardPolicy policy = spec.components.size() == 2 ? ShardPolicy::by_cluster : ShardPolicy::interleaved;
        const ShardLayout layout = shard_dataset(g.labels, policy, 2);
        InProcessTransport transport(shard_matrices(g.data, layout));
        const ClusteringResult r = run_clustering(transport, config, &layout);
        report.entries.push_back({n, r.surrogate_primal, r.dual_value, r.duality_gap_estimate});
    }
    return report;
}

EmResult em_baseline(const Dataset& data, Index j, std::uint64_t seed, int max_iters) {
    if (j < 1) throw ConfigError("em_baseline: need at least one cluster");
    const Matrix& x = data.samples();
    const Index n = x.rows();
    const Index d = x.cols();
    if (n < j) throw ConfigError("em_baseline: fewer samples than clusters");
    std::mt19937_64 rng(seed);

    const Vector global_mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - global_mean.transpose();
    const Matrix global_cov = centered.transpose() * centered / static_cast<double>(n);
    std::vector<Vector> mu;
    std::vector<Matrix> cov(static_cast<std::size_t>(j), global_cov);
    Vector weight = Vector::Constant(j, 1.0 / static_cast<double>(j));
    // k-means++ seeding: each further mean is a sample drawn with probability
    // proportional to its squared distance from the nearest chosen mean
    mu.push_back(x.row(std::uniform_int_distribution<Index>(0, n - 1)(rng)).transpose());
    Vector dist = (x.rowwise() - mu.back().transpose()).rowwise().squaredNorm();
    while (static_cast<Index>(mu.size()) < j) {
        Index pick = 0;
        if (dist.sum() > 0.0) {
            std::discrete_distribution<Index> draw(dist.data(), dist.data() + n);
            pick = draw(rng);
        } else {
            pick = std::uniform_int_distribution<Index>(0, n - 1)(rng);
        }
        mu.push_back(x.row(pick).transpose());
        dist = dist.cwiseMin((x.rowwise() - mu.back().transpose()).rowwise().squaredNorm());
    }

    EmResult out;
    Matrix resp(n, j);
    const double log_2pi = std::log(2.0 * 3.14159265358979323846);
    for (int it = 0; it <= max_iters; ++it) {
        // E-step
        Matrix logp(n, j);
        bool broken = false;
        for (Index i = 0; i < j && !broken; ++i) {
            const auto slot = static_cast<std::size_t>(i);
            Eigen::LLT<Matrix> llt(cov[slot]);
            const Vector diag = llt.matrixL().toDenseMatrix().diagonal();
            if (llt.info() != Eigen::Success || !(diag.minCoeff() > 0.0) || !diag.allFinite()) {
                out.failure = "covariance of component " + std::to_string(i) + " is singular";
                broken = true;
                break;
            }
            const double log_det = 2.0 * diag.array().log().sum();
            const Matrix dev = (x.rowwise() - mu[slot].transpose()).transpose();
            const Matrix solved = llt.matrixL().solve(dev);
            for (Index r = 0; r < n; ++r)
                logp(r, i) = std::log(weight(i)) - 0.5 * (static_cast<double>(d) * log_2pi + log_det +
                                                          solved.col(r).squaredNorm());
        }
        if (broken) break;
        double ll = 0.0;
        for (Index r = 0; r < n; ++r) {
            const double top = logp.row(r).maxCoeff();
            const double s = (logp.row(r).array() - top).exp().sum();
            ll += top + std::log(s);
            resp.row(r) = (logp.row(r).array() - top).exp() / s;
        }
        if (!std::isfinite(ll) || !resp.allFinite()) {
            out.failure = "log-likelihood is not finite";
            break;
        }
        out.log_likelihood.push_back(ll);
        const std::size_t len = out.log_likelihood.size();
        if (len >= 2 && std::abs(ll - out.log_likelihood[len - 2]) <= 1e-10 * (1.0 + std::abs(ll))) {
            out.converged = true;
            break;
        }
        if (it == max_iters) break;
        // M-step
        for (Index i = 0; i < j; ++i) {
            const auto slot = static_cast<std::size_t>(i);
            const double mass = resp.col(i).sum();
            if (!(mass > 0.0)) {
                out.failure = "component " + std::to_string(i) + " lost all mass";
                broken = true;
                break;
            }
            weight(i) = mass / static_cast<double>(n);
            mu[slot] = x.transpose() * resp.col(i) / mass;
            const Matrix dev = x.rowwise() - mu[slot].transpose();
            cov[slot] = dev.transpose() * resp.col(i).asDiagonal() * dev / mass;
        }
        if (broken) break;
    }
    out.labels.resize(static_cast<std::size_t>(n));
    for (Index r = 0; r < n; ++r) {
        Index best = 0;
        resp.row(r).maxCoeff(&best);
        out.labels[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    if (!out.failure.empty()) out.converged = false;
    return out;
}

}  // namespace dwclust
