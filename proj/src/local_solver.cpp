#include "dwclust/local_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dwclust {

DualVariables::DualVariables(Index n_clusters, Index n_hosts, Index dim)
    : n_clusters_(n_clusters),
      n_hosts_(n_hosts),
      dim_(dim),
      lambda_mu_(static_cast<std::size_t>(n_clusters * n_hosts * dim), 0.0),
      lambda_p_(Vector::Zero(n_clusters)) {}

Matrix DualVariables::mu_host_sum() const {
    Matrix sum = Matrix::Zero(n_clusters_, dim_);
    for (Index i = 0; i < n_clusters_; ++i)
        for (Index k = 0; k < n_hosts_; ++k)
            for (Index d = 0; d < dim_; ++d) sum(i, d) += mu(i, k, d);
    return sum;
}

bool DualVariables::all_finite() const {
    for (double v : lambda_mu_)
        if (!std::isfinite(v)) return false;
    return lambda_p_.allFinite();
}

void SolveParams::validate(Index n_clusters, Index dim) const {
    if (rotations.n_clusters() != n_clusters || rotations.dim() != dim)
        throw ConfigError("solve params: rotation set does not match J x D");
    if (beta.beta.rows() != n_clusters || beta.beta.cols() != dim)
        throw ConfigError("solve params: beta does not match J x D");
    if (!(beta.beta.minCoeff() > 0.0) || !beta.beta.allFinite())
        throw ConfigError("solve params: beta must be positive and finite");
    if (proportions_target.size() != n_clusters)
        throw ConfigError("solve params: proportion target has wrong length");
    if (!(proportions_target.minCoeff() > 0.0) ||
        std::abs(proportions_target.sum() - 1.0) > 1e-9)
        throw ConfigError("solve params: proportion target must be positive and sum to 1");
    if (duals.n_clusters() != n_clusters || duals.dim() != dim)
        throw ConfigError("solve params: dual variables do not match J x D");
    if (!duals.all_finite()) throw ConfigError("solve params: non-finite dual variables");
    if (n_total < 1) throw ConfigError("solve params: n_total must be positive");
    if (box && (box->lo.rows() != n_clusters || box->lo.cols() != dim ||
                box->hi.rows() != n_clusters || box->hi.cols() != dim))
        throw ConfigError("solve params: box does not match J x D");
}

Matrix RotatedShard::row(Index n) const {
    Matrix r(n_clusters(), dim());
    for (Index i = 0; i < n_clusters(); ++i) r.row(i) = rotated[static_cast<std::size_t>(i)].row(n);
    return r;
}

RotatedShard transform_shard(const Matrix& shard, const RotationSet& rotations) {
    RotatedShard cache;
    cache.raw = shard;
    const Index j = rotations.n_clusters();
    cache.rotated.resize(static_cast<std::size_t>(j));
    cache.box.lo.resize(j, shard.cols());
    cache.box.hi.resize(j, shard.cols());
    for (Index i = 0; i < j; ++i) {
        const auto slot = static_cast<std::size_t>(i);
        cache.rotated[slot] = shard * rotations.rotations[slot].transpose();
        cache.box.lo.row(i) = cache.rotated[slot].colwise().minCoeff();
        cache.box.hi.row(i) = cache.rotated[slot].colwise().maxCoeff();
    }
    return cache;
}

namespace {

// Shards with at most this many labelings are solved exactly.
constexpr Index kEnumerationLimit = 4096;
// Larger shards: branch and bound until the bound is within this relative
// distance of the best value, or the node budget runs out.
constexpr double kSearchTolerance = 1e-9;
constexpr int kSearchNodeCap = 200000;

// Everything about the host subproblem that stays fixed during one solve.
class Subproblem {
public:
    Subproblem(const RotatedShard& cache, const SolveParams& params, Index host_id)
        : cache_(cache),
          n_(cache.size()),
          j_(cache.n_clusters()),
          d_(cache.dim()),
          inv_n_(1.0 / static_cast<double>(params.n_total)),
          beta_(params.beta.beta),
          own_(j_, d_),
          box_(params.box ? *params.box : cache.box),
          lin_(n_, j_) {
        const Matrix big_lambda = params.duals.mu_host_sum();
        for (Index i = 0; i < j_; ++i)
            for (Index d = 0; d < d_; ++d) own_(i, d) = params.duals.mu(i, host_id, d);
        for (Index i = 0; i < j_; ++i) {
            const Matrix& y = cache.rotated[static_cast<std::size_t>(i)];
            const double scale = inv_n_ / params.proportions_target(i);
            const Vector coupling = y * big_lambda.row(i).transpose();
            for (Index n = 0; n < n_; ++n)
                lin_(n, i) = params.duals.p()(i) * inv_n_ - scale * coupling(n);
        }
    }

    Index n() const { return n_; }
    Index j() const { return j_; }

    double quad(Index n, Index i, const Matrix& mu_hat) const {
        const Matrix& y = cache_.rotated[static_cast<std::size_t>(i)];
        double s = 0.0;
        for (Index d = 0; d < d_; ++d) {
            const double r = y(n, d) - mu_hat(i, d);
            s += beta_(i, d) * r * r;
        }
        return s * inv_n_;
    }

    double cost(Index n, Index i, const Matrix& mu_hat) const { return quad(n, i, mu_hat) + lin_(n, i); }

    double objective(const Matrix& a, const Matrix& mu_hat) const {
        double f = 0.0;
        for (Index n = 0; n < n_; ++n)
            for (Index i = 0; i < j_; ++i)
                if (a(n, i) != 0.0) f += a(n, i) * cost(n, i, mu_hat);
        for (Index i = 0; i < j_; ++i)
            for (Index d = 0; d < d_; ++d) f += own_(i, d) * mu_hat(i, d);
        return f;
    }

    // One-hot argmin per row, ties to the lowest cluster index.
    void assign_step(Matrix& a, const Matrix& mu_hat) const {
        a.setZero(n_, j_);
        for (Index n = 0; n < n_; ++n) {
            Index best = 0;
            double best_cost = cost(n, 0, mu_hat);
            for (Index i = 1; i < j_; ++i) {
                const double c = cost(n, i, mu_hat);
                if (c < best_cost) {
                    best_cost = c;
                    best = i;
                }
            }
            a(n, best) = 1.0;
        }
    }

    double best_mean(Index i, Index d, double mass, double first) const {
        return best_mean_in(i, d, mass, first, box_.lo(i, d), box_.hi(i, d));
    }

    double best_mean_in(Index i, Index d, double mass, double first, double lo, double hi) const {
        const double lam = own_(i, d);
        if (!(mass > 0.0)) {
            if (lam > 0.0) return lo;
            if (lam < 0.0) return hi;
            return 0.5 * (lo + hi);
        }
        const double unconstrained = first / mass - lam / (2.0 * beta_(i, d) * mass * inv_n_);
        return std::clamp(unconstrained, lo, hi);
    }

    Matrix mean_step(const Matrix& a) const {
        Matrix mu_hat(j_, d_);
        for (Index i = 0; i < j_; ++i) {
            const Matrix& y = cache_.rotated[static_cast<std::size_t>(i)];
            const double mass = a.col(i).sum();
            for (Index d = 0; d < d_; ++d) mu_hat(i, d) = best_mean(i, d, mass, y.col(d).dot(a.col(i)));
        }
        return mu_hat;
    }

    Matrix plain_means(const Matrix& a) const {
        Matrix mu_hat(j_, d_);
        for (Index i = 0; i < j_; ++i) {
            const Matrix& y = cache_.rotated[static_cast<std::size_t>(i)];
            const double mass = a.col(i).sum();
            for (Index d = 0; d < d_; ++d) {
                const double lo = box_.lo(i, d), hi = box_.hi(i, d);
                mu_hat(i, d) = mass > 0.0 ? std::clamp(y.col(d).dot(a.col(i)) / mass, lo, hi)
                                          : 0.5 * (lo + hi);
            }
        }
        return mu_hat;
    }

    // Optimal value of cluster i's mean-dependent terms for hard-assignment
    // statistics (count, sum y, sum y^2) per coordinate.
    double cluster_value(Index i, double count, const Vector& s1, const Vector& s2) const {
        double v = 0.0;
        for (Index d = 0; d < d_; ++d) {
            const double mu = best_mean(i, d, count, s1(d));
            if (count > 0.0)
                v += beta_(i, d) * inv_n_ * (s2(d) - 2.0 * mu * s1(d) + mu * mu * count);
            v += own_(i, d) * mu;
        }
        return v;
    }

    // Single-sample relocation (Hartigan) on a one-hot assignment, each move
    // re-optimizing the two affected means exactly.
    void relocate(Matrix& a, double scale) const {
        std::vector<Index> label(static_cast<std::size_t>(n_));
        Vector count = Vector::Zero(j_);
        Matrix s1 = Matrix::Zero(j_, d_), s2 = Matrix::Zero(j_, d_);
        for (Index n = 0; n < n_; ++n) {
            Index l = 0;
            a.row(n).maxCoeff(&l);
            label[static_cast<std::size_t>(n)] = l;
            const auto y = cache_.rotated[static_cast<std::size_t>(l)].row(n);
            count(l) += 1.0;
            s1.row(l) += y;
            s2.row(l) += y.cwiseProduct(y);
        }
        Vector value(j_);
        for (Index i = 0; i < j_; ++i) value(i) = cluster_value(i, count(i), s1.row(i), s2.row(i));

        const double threshold = 1e-12 * (1.0 + std::abs(scale));
        for (int pass = 0; pass < 100; ++pass) {
            bool moved = false;
            for (Index n = 0; n < n_; ++n) {
                const Index from = label[static_cast<std::size_t>(n)];
                const auto yf = cache_.rotated[static_cast<std::size_t>(from)].row(n);
                const Vector s1_from = s1.row(from) - yf;
                const Vector s2_from = s2.row(from) - yf.cwiseProduct(yf);
                const double from_after = cluster_value(from, count(from) - 1.0, s1_from, s2_from);
                Index best = from;
                double best_delta = -threshold;
                double best_to_after = 0.0;
                for (Index to = 0; to < j_; ++to) {
                    if (to == from) continue;
                    const auto yt = cache_.rotated[static_cast<std::size_t>(to)].row(n);
                    const double to_after = cluster_value(to, count(to) + 1.0, s1.row(to) + yt,
                                                          s2.row(to) + yt.cwiseProduct(yt));
                    const double delta = (from_after - value(from)) + (to_after - value(to)) +
                                         lin_(n, to) - lin_(n, from);
                    if (delta < best_delta) {
                        best_delta = delta;
                        best = to;
                        best_to_after = to_after;
                    }
                }
                if (best == from) continue;
                const auto yt = cache_.rotated[static_cast<std::size_t>(best)].row(n);
                count(from) -= 1.0;
                s1.row(from) = s1_from.transpose();
                s2.row(from) = s2_from.transpose();
                value(from) = from_after;
                count(best) += 1.0;
                s1.row(best) += yt;
                s2.row(best) += yt.cwiseProduct(yt);
                value(best) = best_to_after;
                a(n, from) = 0.0;
                a(n, best) = 1.0;
                label[static_cast<std::size_t>(n)] = best;
                moved = true;
            }
            if (!moved) break;
        }
    }

    // Exact minimum over all one-hot labelings; the first minimizer in
    // enumeration order (sample 0 varies fastest) wins ties.
    Matrix enumerate() const {
        std::vector<Index> label(static_cast<std::size_t>(n_), 0);
        std::vector<Index> best_label = label;
        double best = std::numeric_limits<double>::infinity();
        Vector count(j_);
        Matrix s1(j_, d_), s2(j_, d_);
        while (true) {
            count.setZero();
            s1.setZero();
            s2.setZero();
            double f = 0.0;
            for (Index n = 0; n < n_; ++n) {
                const Index l = label[static_cast<std::size_t>(n)];
                const auto y = cache_.rotated[static_cast<std::size_t>(l)].row(n);
                count(l) += 1.0;
                s1.row(l) += y;
                s2.row(l) += y.cwiseProduct(y);
                f += lin_(n, l);
            }
            for (Index i = 0; i < j_; ++i) f += cluster_value(i, count(i), s1.row(i), s2.row(i));
            if (f < best) {
                best = f;
                best_label = label;
            }
            std::size_t pos = 0;
            while (pos < label.size() && ++label[pos] == j_) label[pos++] = 0;
            if (pos == label.size()) break;
        }
        Matrix a = Matrix::Zero(n_, j_);
        for (Index n = 0; n < n_; ++n) a(n, best_label[static_cast<std::size_t>(n)]) = 1.0;
        return a;
    }

    struct SearchResult {
        Matrix mu_hat;  // best point found, empty when the incumbent stands
        double upper = 0.0;
        double lower = 0.0;
        int nodes = 0;
    };

    // Best-first branch and bound over the mean box. Inside a node's box a
    // sample is fixed to a cluster once that cluster is its cheapest for every
    // mean in the box; fixed samples contribute an exact separable quadratic,
    // open ones their smallest cost over the box.
    SearchResult search(double incumbent, double tol, int node_cap) const {
        SearchNode root;
        root.lo = box_.lo;
        root.hi = box_.hi;
        root.open.resize(static_cast<std::size_t>(n_));
        for (Index n = 0; n < n_; ++n) root.open[static_cast<std::size_t>(n)] = n;
        root.count = Vector::Zero(j_);
        root.s1 = Matrix::Zero(j_, d_);
        root.s2 = Matrix::Zero(j_, d_);

        SearchResult out;
        out.upper = incumbent;
        double floor = std::numeric_limits<double>::infinity();
        Matrix mu(j_, d_);
        auto consider = [&](SearchNode&& node, std::vector<SearchNode>& heap) {
            const double up = refine(node, mu);
            if (up < out.upper) {
                out.upper = up;
                out.mu_hat = mu;
            }
            if (!node.open.empty() && node.lower < out.upper - tol) {
                heap.push_back(std::move(node));
                std::push_heap(heap.begin(), heap.end(), SearchNode::later);
            } else {
                floor = std::min(floor, node.lower);
            }
        };
        std::vector<SearchNode> heap;
        consider(std::move(root), heap);
        while (!heap.empty() && heap.front().lower < out.upper - tol && out.nodes < node_cap) {
            std::pop_heap(heap.begin(), heap.end(), SearchNode::later);
            SearchNode node = std::move(heap.back());
            heap.pop_back();
            ++out.nodes;
            Index si = 0, sd = 0;
            double widest = 0.0;
            for (Index i = 0; i < j_; ++i)
                for (Index d = 0; d < d_; ++d) {
                    const double w = node.hi(i, d) - node.lo(i, d);
                    if (beta_(i, d) * w * w > widest) {
                        widest = beta_(i, d) * w * w;
                        si = i;
                        sd = d;
                    }
                }
            if (!(widest > 0.0)) {
                floor = std::min(floor, node.lower);
                continue;
            }
            const double mid = 0.5 * (node.lo(si, sd) + node.hi(si, sd));
            SearchNode left = node;
            left.hi(si, sd) = mid;
            node.lo(si, sd) = mid;
            consider(std::move(left), heap);
            consider(std::move(node), heap);
        }
        out.lower = std::min(out.upper, floor);
        if (!heap.empty()) out.lower = std::min(out.lower, heap.front().lower);
        return out;
    }

private:
    struct SearchNode {
        Matrix lo, hi;
        std::vector<Index> open;
        Vector count;
        Matrix s1, s2;
        double fixed_lin = 0.0;
        double lower = 0.0;

        static bool later(const SearchNode& a, const SearchNode& b) { return a.lower > b.lower; }
    };

    // Fixes what the node's box decides, sets its lower bound and returns the
    // objective at the minimizer `mu` of the fixed part.
    double refine(SearchNode& node, Matrix& mu) const {
        std::vector<Index> still;
        double open_lower = 0.0;
        Vector near(j_), far(j_);
        for (Index n : node.open) {
            for (Index i = 0; i < j_; ++i) {
                const Matrix& y = cache_.rotated[static_cast<std::size_t>(i)];
                double l = 0.0, h = 0.0;
                for (Index d = 0; d < d_; ++d) {
                    const double v = y(n, d), a = node.lo(i, d), b = node.hi(i, d);
                    const double dist = v < a ? a - v : (v > b ? v - b : 0.0);
                    const double reach = std::max(std::abs(v - a), std::abs(v - b));
                    l += beta_(i, d) * dist * dist;
                    h += beta_(i, d) * reach * reach;
                }
                near(i) = lin_(n, i) + inv_n_ * l;
                far(i) = lin_(n, i) + inv_n_ * h;
            }
            Index best = 0;
            const double m = near.minCoeff(&best);
            bool fixed = true;
            for (Index i = 0; i < j_; ++i)
                if (i != best && far(best) > near(i)) fixed = false;
            if (fixed) {
                const auto y = cache_.rotated[static_cast<std::size_t>(best)].row(n);
                node.count(best) += 1.0;
                node.s1.row(best) += y;
                node.s2.row(best) += y.cwiseProduct(y);
                node.fixed_lin += lin_(n, best);
            } else {
                still.push_back(n);
                open_lower += m;
            }
        }
        node.open = std::move(still);
        double fixed_value = node.fixed_lin;
        for (Index i = 0; i < j_; ++i)
            for (Index d = 0; d < d_; ++d) {
                const double c = node.count(i), s1 = node.s1(i, d);
                const double m = best_mean_in(i, d, c, s1, node.lo(i, d), node.hi(i, d));
                mu(i, d) = m;
                if (c > 0.0) fixed_value += beta_(i, d) * inv_n_ * (node.s2(i, d) - 2.0 * m * s1 + m * m * c);
                fixed_value += own_(i, d) * m;
            }
        node.lower = fixed_value + open_lower;
        double upper = fixed_value;
        for (Index n : node.open) {
            double c = cost(n, 0, mu);
            for (Index i = 1; i < j_; ++i) c = std::min(c, cost(n, i, mu));
            upper += c;
        }
        return upper;
    }

    const RotatedShard& cache_;
    Index n_, j_, d_;
    double inv_n_;
    const Matrix& beta_;
    Matrix own_;
    MeanBox box_;
    Matrix lin_;
};

struct Descent {
    Matrix a;
    Matrix mu_hat;
    double f = 0.0;
    int sweeps = 0;
    double max_ascent = 0.0;
};

void check_finite(double f, int round_id) {
    if (!std::isfinite(f))
        throw NumericError("local solve (round " + std::to_string(round_id) +
                           "): non-finite objective");
}

// Alternates assignment and mean steps from (a, mu_hat), then polishes with
// single-sample relocations.
Descent descend(const Subproblem& sp, Matrix a, Matrix mu_hat, bool assign_first, int round_id) {
    Descent out;
    if (!assign_first) mu_hat = sp.mean_step(a);
    double f = sp.objective(a, mu_hat);
    check_finite(f, round_id);
    auto step = [&](double next) {
        check_finite(next, round_id);
        out.max_ascent = std::max(out.max_ascent, next - f);
        f = next;
    };
    int sweep = 0;
    while (sweep < 50) {
        ++sweep;
        const double before = f;
        sp.assign_step(a, mu_hat);
        step(sp.objective(a, mu_hat));
        mu_hat = sp.mean_step(a);
        step(sp.objective(a, mu_hat));
        if (before - f < 1e-10 * (1.0 + std::abs(f))) break;
    }
    sp.relocate(a, f);
    mu_hat = sp.mean_step(a);
    step(sp.objective(a, mu_hat));
    out.a = std::move(a);
    out.mu_hat = std::move(mu_hat);
    out.f = f;
    out.sweeps = sweep;
    return out;
}

bool small_enough_to_enumerate(Index n, Index j) {
    double combos = 1.0;
    for (Index k = 0; k < n; ++k) {
        combos *= static_cast<double>(j);
        if (combos > static_cast<double>(kEnumerationLimit)) return false;
    }
    return true;
}

}  // namespace

Vector assignment_costs(const Matrix& rotated_row, const SolveParams& params, const Matrix& mu_hat,
                        Index host_id) {
    const Index j = rotated_row.rows();
    const Index dim = rotated_row.cols();
    const double inv_n = 1.0 / static_cast<double>(params.n_total);
    const Matrix big_lambda = params.duals.mu_host_sum();
    (void)host_id;  // a_ni's coefficient involves only the host-summed multipliers
    Vector c(j);
    for (Index i = 0; i < j; ++i) {
        double s = 0.0;
        for (Index d = 0; d < dim; ++d) {
            const double r = rotated_row(i, d) - mu_hat(i, d);
            s += params.beta.beta(i, d) * r * r * inv_n -
                 big_lambda(i, d) * rotated_row(i, d) * inv_n / params.proportions_target(i);
        }
        c(i) = s + params.duals.p()(i) * inv_n;
    }
    return c;
}

double subproblem_objective(const RotatedShard& cache, const SolveParams& params, Index host_id,
                            const Matrix& a, const Matrix& mu_hat) {
    return Subproblem(cache, params, host_id).objective(a, mu_hat);
}

LocalSolveResult solve_local(const RotatedShard& cache, const SolveParams& params, Index host_id,
                             const Matrix& warm_assignments) {
    params.validate(cache.n_clusters(), cache.dim());
    if (warm_assignments.rows() != cache.size() || warm_assignments.cols() != cache.n_clusters())
        throw ConfigError("solve_local: warm start does not match shard");
    const Subproblem sp(cache, params, host_id);

    Descent best = descend(sp, warm_assignments, Matrix(), false, params.round_id);
    Descent restart = descend(sp, warm_assignments, sp.plain_means(warm_assignments), true,
                              params.round_id);
    const double ascent = std::max(best.max_ascent, restart.max_ascent);
    const int sweeps = best.sweeps + restart.sweeps;
    if (restart.f < best.f) best = std::move(restart);
    // Exact search only replaces a strictly worse descent result, so label
    // continuity with the warm start survives ties.
    if (small_enough_to_enumerate(sp.n(), sp.j())) {
        Descent exact;
        exact.a = sp.enumerate();
        exact.mu_hat = sp.mean_step(exact.a);
        exact.f = sp.objective(exact.a, exact.mu_hat);
        check_finite(exact.f, params.round_id);
        if (exact.f < best.f - 1e-12 * (1.0 + std::abs(best.f))) best = std::move(exact);
    }
    double lower = best.f;
    if (small_enough_to_enumerate(sp.n(), sp.j())) {
        lower = best.f;
    } else {
        const double tol = kSearchTolerance * (1.0 + std::abs(best.f));
        const auto found = sp.search(best.f, tol, kSearchNodeCap);
        if (found.mu_hat.size() > 0) {
            Descent polished = descend(sp, warm_assignments, found.mu_hat, true, params.round_id);
            if (polished.f < best.f - 1e-12 * (1.0 + std::abs(best.f))) best = std::move(polished);
        }
        lower = std::min(found.lower, best.f);
    }
    LocalSolveResult r;
    r.f_star = best.f;
    r.f_lower = lower;
    r.local_assignments = std::move(best.a);
    r.mu_hat = std::move(best.mu_hat);
    r.sweeps = sweeps;
    r.max_ascent = ascent;
    r.cluster_mass = r.local_assignments.colwise().sum().transpose();
    r.rotated_first_moment.resize(sp.j(), cache.dim());
    for (Index i = 0; i < sp.j(); ++i)
        r.rotated_first_moment.row(i) =
            (cache.rotated[static_cast<std::size_t>(i)].transpose() * r.local_assignments.col(i))
                .transpose();
    MomentStats raw = moment_stats(cache.raw, r.local_assignments);
    r.raw_first_moment = std::move(raw.first);
    r.raw_second_moment = std::move(raw.second);
    return r;
}

LocalDualTerms local_dual_terms(const LocalSolveResult& result, const SolveParams& params) {
    const double n = static_cast<double>(params.n_total);
    LocalDualTerms t;
    t.g_mu = result.mu_hat;
    for (Index i = 0; i < t.g_mu.rows(); ++i)
        t.g_mu.row(i) -= result.rotated_first_moment.row(i) / (params.proportions_target(i) * n);
    t.g_mass = result.cluster_mass / n;
    return t;
}

}  // namespace dwclust
