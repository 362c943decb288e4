#include "dwclust/coordinator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "dwclust/transport.hpp"

namespace dwclust {

void CoordinatorConfig::validate() const {
    if (n_clusters < 2) throw ConfigError("J must be at least 2");
    reg.validate();
    if (max_outer_rounds < 1) throw ConfigError("max_outer_rounds must be positive");
    if (dual_rounds < 1) throw ConfigError("dual_rounds must be positive");
    if (!(step_size_initial > 0.0)) throw ConfigError("step_size_initial must be positive");
    if (!(tol_objective > 0.0)) throw ConfigError("tol_objective must be positive");
    if (!(proportion_step > 0.0)) throw ConfigError("proportion_step must be positive");
    if (restarts < 1) throw ConfigError("restarts must be positive");
    if (proportions) {
        if (proportions->size() != n_clusters) throw ConfigError("proportions must have J entries");
        if (!(proportions->minCoeff() > 0.0) || std::abs(proportions->sum() - 1.0) > 1e-9)
            throw ConfigError("proportions must be positive and sum to 1");
    }
}

std::string to_string(ProportionMode m) { return m == ProportionMode::optimize ? "optimize" : "fixed-uniform"; }
std::string to_string(RoundingMode m) { return m == RoundingMode::argmax ? "argmax" : "randomized"; }

ProportionMode proportion_mode_from_string(const std::string& s) {
    if (s == "fixed-uniform") return ProportionMode::fixed_uniform;
    if (s == "optimize") return ProportionMode::optimize;
    throw ConfigError("unknown proportion mode '" + s + "'");
}

RoundingMode rounding_mode_from_string(const std::string& s) {
    if (s == "randomized") return RoundingMode::randomized;
    if (s == "argmax") return RoundingMode::argmax;
    throw ConfigError("unknown rounding mode '" + s + "'");
}

Json to_json(const CoordinatorConfig& c) {
    Json j{{"n_clusters", c.n_clusters},
           {"sigma_n_sq", c.reg.sigma_n_sq},
           {"variance_floor", c.reg.variance_floor},
           {"max_outer_rounds", c.max_outer_rounds},
           {"dual_rounds", c.dual_rounds},
           {"step_size_initial", c.step_size_initial},
           {"tol_objective", c.tol_objective},
           {"proportion_mode", to_string(c.proportion_mode)},
           {"proportion_step", c.proportion_step},
           {"rounding_mode", to_string(c.rounding_mode)},
           {"seed", c.seed},
           {"restarts", c.restarts}};
    if (c.proportions) j["proportions"] = to_json(*c.proportions);
    return j;
}

double step_size(const CoordinatorConfig& config, int t) {
    return config.step_size_initial / std::sqrt(static_cast<double>(std::max(t, 1)));
}

double dual_step(DualVariables& duals, const std::vector<LocalSolveResult>& results, int t,
                 const CoordinatorConfig& config, const Vector& p_target, Index n_total,
                 const Matrix& beta) {
    const Index k_hosts = duals.n_hosts();
    const Index j = duals.n_clusters();
    const Index dim = duals.dim();
    if (static_cast<Index>(results.size()) != k_hosts)
        throw StaleMessageError("dual step needs one result per host, got " + std::to_string(results.size()));
    const double n = static_cast<double>(n_total);

    double value = -duals.p().dot(p_target);
    Matrix global_first = Matrix::Zero(j, dim);
    Vector mass = Vector::Zero(j);
    for (const LocalSolveResult& r : results) {
        value += r.f_lower;
        global_first += r.rotated_first_moment;
        mass += r.cluster_mass;
    }
    const double alpha = step_size(config, t);
    for (Index k = 0; k < k_hosts; ++k) {
        const LocalSolveResult& r = results[static_cast<std::size_t>(k)];
        for (Index i = 0; i < j; ++i)
            for (Index d = 0; d < dim; ++d) {
                const double g = r.mu_hat(i, d) - global_first(i, d) / (p_target(i) * n);
                const double scale = beta.size() == 0 ? 1.0 : 2.0 * beta(i, d) * std::max(r.cluster_mass(i) / n, 1e-6);
                duals.mu(i, k, d) += alpha * scale * g;
            }
    }
    for (Index i = 0; i < j; ++i) duals.p()(i) += alpha * (mass(i) / n - p_target(i));
    if (!std::isfinite(value) || !duals.all_finite())
        throw NumericError("dual step " + std::to_string(t) + ": non-finite multipliers or dual value");
    return value;
}

Matrix ergodic_average(const std::vector<Matrix>& history, int window) {
    if (history.empty()) throw ConfigError("ergodic_average: empty history");
    const std::size_t w = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(window, 1)), 1, history.size());
    Matrix sum = Matrix::Zero(history.back().rows(), history.back().cols());
    for (std::size_t h = history.size() - w; h < history.size(); ++h) sum += history[h];
    return sum / static_cast<double>(w);
}

std::vector<Matrix> mass_flows(const Matrix& host_mass, const Vector& target) {
    const Index k_hosts = host_mass.rows();
    const Index j = host_mass.cols();
    const Vector total = host_mass.colwise().sum().transpose();
    const Vector surplus = total - target;
    std::vector<Index> sources, sinks;
    for (Index i = 0; i < j; ++i) {
        if (surplus(i) > 0.0) sources.push_back(i);
        if (surplus(i) < 0.0) sinks.push_back(i);
    }
    Matrix global = Matrix::Zero(j, j);
    std::size_t s = 0, d = 0;
    double give = sources.empty() ? 0.0 : surplus(sources[0]);
    double take = sinks.empty() ? 0.0 : -surplus(sinks[0]);
    while (s < sources.size() && d < sinks.size()) {
        const double amount = std::min(give, take);
        global(sources[s], sinks[d]) += amount;
        give -= amount;
        take -= amount;
        if (give <= take) {
            if (++s < sources.size()) give = surplus(sources[s]);
        } else {
            if (++d < sinks.size()) take = -surplus(sinks[d]);
        }
    }
    std::vector<Matrix> flows(static_cast<std::size_t>(k_hosts), Matrix::Zero(j, j));
    for (Index k = 0; k < k_hosts; ++k)
        for (Index i = 0; i < j; ++i) {
            if (!(total(i) > 0.0)) continue;
            const double share = host_mass(k, i) / total(i);
            flows[static_cast<std::size_t>(k)].row(i) = share * global.row(i);
        }
    return flows;
}

Matrix repair_penalty(const RotatedShard& cache, const Matrix& beta, const Matrix& rotated_means) {
    const Index n = cache.size();
    const Index j = cache.n_clusters();
    Matrix c(n, j);
    for (Index i = 0; i < j; ++i) {
        const Matrix& y = cache.rotated[static_cast<std::size_t>(i)];
        for (Index r = 0; r < n; ++r) {
            double s = 0.0;
            for (Index d = 0; d < cache.dim(); ++d) {
                const double e = y(r, d) - rotated_means(i, d);
                s += beta(i, d) * e * e;
            }
            c(r, i) = s;
        }
    }
    return c;
}

void repair_masses(Matrix& a, const Matrix& flows, const Matrix& penalty) {
    const Index n = a.rows();
    const Index j = a.cols();
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index from = 0; from < j; ++from)
        for (Index to = 0; to < j; ++to) {
            double remaining = flows(from, to);
            if (from == to || !(remaining > 0.0)) continue;
            std::iota(rows.begin(), rows.end(), Index{0});
            std::stable_sort(rows.begin(), rows.end(), [&](Index x, Index y) {
                return penalty(x, to) - penalty(x, from) < penalty(y, to) - penalty(y, from);
            });
            for (Index r : rows) {
                if (!(remaining > 0.0)) break;
                const double moved = std::min(a(r, from), remaining);
                if (!(moved > 0.0)) continue;
                a(r, from) -= moved;
                a(r, to) += moved;
                remaining -= moved;
            }
        }
}

AssignmentMatrix recover_primal(const std::vector<Matrix>& history, int window, const Vector& p_target,
                                const Matrix& penalty) {
    Matrix a = ergodic_average(history, window);
    const Matrix mass = a.colwise().sum();
    const Vector target = p_target * static_cast<double>(a.rows());
    repair_masses(a, mass_flows(mass, target).front(), penalty);
    return AssignmentMatrix{std::move(a)};
}

Vector project_to_simplex(const Vector& v, double lower) {
    const Index j = v.size();
    const double budget = 1.0 - static_cast<double>(j) * lower;
    if (budget < 0.0) throw ConfigError("project_to_simplex: lower bound too large");
    Vector w = v.array() - lower;
    Vector sorted = w;
    std::sort(sorted.data(), sorted.data() + j, std::greater<>());
    double cumulative = 0.0, theta = 0.0;
    for (Index r = 0; r < j; ++r) {
        cumulative += sorted(r);
        const double t = (cumulative - budget) / static_cast<double>(r + 1);
        if (sorted(r) - t > 0.0) theta = t;
    }
    Vector out = (w.array() - theta).cwiseMax(0.0) + lower;
    // absorb rounding so the entries sum to one
    Index top = 0;
    out.maxCoeff(&top);
    out(top) += 1.0 - out.sum();
    return out;
}

Vector optimize_proportions(const Vector& p, const std::function<double(const Vector&)>& evaluate,
                            const CoordinatorConfig& config) {
    const Index j = p.size();
    const double lower = 1.0 / (10.0 * static_cast<double>(j));
    const double delta = std::min(0.01, 0.5 * p.minCoeff());
    Vector grad(j);
    for (Index i = 0; i < j; ++i) {
        Vector u = Vector::Constant(j, -1.0 / static_cast<double>(j));
        u(i) += 1.0;
        grad(i) = (evaluate(p + delta * u) - evaluate(p - delta * u)) / (2.0 * delta);
    }
    // plain gradient step, capped at length proportion_step
    return project_to_simplex(p - config.proportion_step * grad / std::max(1.0, grad.norm()), lower);
}

std::vector<int> round_assignments(const AssignmentMatrix& a, RoundingMode mode, std::uint64_t seed) {
    std::vector<int> labels(static_cast<std::size_t>(a.n_rows()));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Index n = 0; n < a.n_rows(); ++n) {
        Index pick = 0;
        if (mode == RoundingMode::argmax) {
            a.a.row(n).maxCoeff(&pick);
        } else {
            const double u = unif(rng) * a.a.row(n).sum();
            double cumulative = 0.0;
            pick = -1;
            for (Index i = 0; i < a.n_clusters(); ++i) {
                if (!(a.a(n, i) > 0.0)) continue;
                cumulative += a.a(n, i);
                pick = i;
                if (u < cumulative) break;
            }
            if (pick < 0) pick = 0;
        }
        labels[static_cast<std::size_t>(n)] = static_cast<int>(pick);
    }
    return labels;
}

InitialState initialize_state(Index n_samples, Index dim, const CoordinatorConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::exponential_distribution<double> expo(1.0);
    InitialState s;
    s.assignments.a.resize(n_samples, config.n_clusters);
    for (Index n = 0; n < n_samples; ++n) {
        for (Index i = 0; i < config.n_clusters; ++i) s.assignments.a(n, i) = expo(rng);
        s.assignments.a.row(n) /= s.assignments.a.row(n).sum();
    }
    for (Index i = 0; i < config.n_clusters; ++i) s.rotations.push_back(random_orthonormal(dim, rng));
    return s;
}

namespace {

enum class Source { window, last, first };

const char* source_name(Source s) {
    switch (s) {
        case Source::window: return "window";
        case Source::last: return "last";
        default: return "first";
    }
}

MomentStats sum_stats(const std::vector<Json>& replies) {
    MomentStats total;
    for (std::size_t k = 0; k < replies.size(); ++k) {
        MomentStats s;
        try {
            s = moment_stats_from_json(require(replies[k], "stats"));
        } catch (const ProtocolError& e) {
            throw HostFailure(static_cast<int>(k), std::string("bad statistics: ") + e.what());
        }
        if (k == 0)
            total = std::move(s);
        else
            total += s;
    }
    return total;
}

Matrix host_masses(const std::vector<Json>& replies, Index j) {
    Matrix m(static_cast<Index>(replies.size()), j);
    for (std::size_t k = 0; k < replies.size(); ++k)
        m.row(static_cast<Index>(k)) = vector_from_json(require(require(replies[k], "stats"), "mass"), "mass").transpose();
    return m;
}

bool proportions_met(const MomentStats& s, const Vector& p_target, Index n_total) {
    for (Index i = 0; i < p_target.size(); ++i)
        if (std::abs(s.mass(i) / static_cast<double>(n_total) - p_target(i)) >= 1e-9) return false;
    return true;
}

// Majorizer of the coding objective at fixed proportions, tangent where the
// rotations and weights were computed:
// U(a) = 2H(p) + sum_i p_i sum_d [log s_id - 1 + beta_id (A_i (Sigma_i(a) + sigma_n^2 I) A_i^T)_dd].
struct Tangent {
    RotationSet rotations;
    BetaWeights beta;
    double constant = 0.0;  // U(a) - sum_i p_i sum_d beta_id (A_i Sigma_i(a) A_i^T)_dd
};

Tangent make_tangent(RotationSet rs, const CoordinatorConfig& config, const Vector& p_target) {
    Tangent t;
    t.beta = beta_from_variances(rs, config.reg);
    t.constant = 2.0 * entropy(p_target);
    for (Index i = 0; i < rs.n_clusters(); ++i)
        for (Index d = 0; d < rs.dim(); ++d) {
            const double s = std::max(rs.rotated_variances(i, d), config.reg.variance_floor);
            t.constant += p_target(i) * (std::log(s) - 1.0 + t.beta.beta(i, d) * config.reg.sigma_n_sq);
        }
    t.rotations = std::move(rs);
    return t;
}

double surrogate_value(const Tangent& t, const MomentStats& stats, Index n_total, const Vector& p_target) {
    const ClusterModel m = model_from_stats(stats, n_total);
    double u = t.constant;
    for (Index i = 0; i < m.n_clusters(); ++i) {
        const Matrix& a = t.rotations.rotations[static_cast<std::size_t>(i)];
        const Matrix b = a * m.covariances[static_cast<std::size_t>(i)] * a.transpose();
        for (Index d = 0; d < b.rows(); ++d) u += p_target(i) * t.beta.beta(i, d) * b(d, d);
    }
    return u;
}

struct RestartOutcome {
    double objective = std::numeric_limits<double>::infinity();
    double surrogate_primal = 0.0;
    double dual = 0.0;
    int rounds = 0;
    Vector p_target;
    MomentStats stats;
    Matrix assignments;  // host order
    std::vector<TraceRecord> trace;
};

class Driver {
public:
    Driver(Transport& transport, const CoordinatorConfig& config) : tr_(transport), cfg_(config) {
        const std::vector<ShardInfo> info = hello(tr_);
        k_ = static_cast<Index>(info.size());
        dim_ = info.front().dim;
        for (const ShardInfo& s : info) {
            if (s.dim != dim_) throw ConfigError("inconsistent shard dimensions across hosts");
            if (s.n_samples < 1) throw ConfigError("host " + std::to_string(s.host_id) + " has an empty shard");
            offsets_.push_back(n_);
            sizes_.push_back(s.n_samples);
            n_ += s.n_samples;
        }
    }

    Index n_total() const { return n_; }
    const std::vector<Index>& offsets() const { return offsets_; }
    const std::vector<Index>& sizes() const { return sizes_; }

    RestartOutcome run(int restart, std::uint64_t seed, std::vector<TraceRecord>& trace_sink) {
        const Index j = cfg_.n_clusters;
        const InitialState init = initialize_state(n_, dim_, cfg_, seed);
        std::vector<Json> payloads;
        for (Index k = 0; k < k_; ++k)
            payloads.push_back(Json{{"op", "init"},
                                    {"assignments", to_json(Matrix(init.assignments.a.middleRows(
                                                        offsets_[static_cast<std::size_t>(k)],
                                                        sizes_[static_cast<std::size_t>(k)])))}});
        MomentStats current = sum_stats(scatter(tr_, next_round(), payloads));
        double current_obj = objective_of(current);

        Vector p_target = cfg_.proportions ? *cfg_.proportions : Vector::Constant(j, 1.0 / static_cast<double>(j));
        Vector lambda_p = Vector::Zero(j);
        RestartOutcome out;
        bool last_committed = false;
        int round = 0;
        for (round = 1; round <= cfg_.max_outer_rounds; ++round) {
            const ClusterModel model = model_from_stats(current, n_);
            RotationSet rs = round == 1 ? rotate_with(model, init.rotations, cfg_.reg) : diagonalize(model, cfg_.reg);
            const Tangent tangent = make_tangent(std::move(rs), cfg_, p_target);
            // random rotations say nothing about where clusters sit, so the
            // first round keeps the initial means and only reshapes clusters
            const Pass pass = inner_pass(tangent, p_target, lambda_p, current, round == 1);
            lambda_p = pass.lambda_p;

            const bool feasible = proportions_met(current, p_target, n_);
            const bool commit = !feasible || pass.best_objective <= current_obj;
            const double previous = current_obj;
            if (commit) {
                current = commit_source(pass.best_source);
                current_obj = objective_of(current);
            } else {
                commit_source(std::nullopt);
            }
            last_committed = commit;
            record(trace_sink, out, restart, round, current_obj, pass, commit);
            if (round > 1 && !commit) break;
            // never stop in the first round: it runs on random rotations
            if (round > 1 && std::abs(previous - current_obj) < cfg_.tol_objective * (1.0 + std::abs(previous))) break;

            if (cfg_.proportion_mode == ProportionMode::optimize) {
                const Tangent& tan = tangent;
                auto evaluate = [&](const Vector& p) {
                    Vector lp = lambda_p;
                    return inner_pass(tan, p, lp, current).best_objective;
                };
                p_target = optimize_proportions(p_target, evaluate, cfg_);
            }
        }
        out.rounds = std::min(round, cfg_.max_outer_rounds);
        if (last_committed) {
            // bound certificate at the returned primal: tangent taken there, nothing committed
            const ClusterModel model = model_from_stats(current, n_);
            const Tangent tangent = make_tangent(diagonalize(model, cfg_.reg), cfg_, p_target);
            const Pass pass = inner_pass(tangent, p_target, lambda_p, current);
            commit_source(std::nullopt);
            record(trace_sink, out, restart, out.rounds + 1, current_obj, pass, false);
        }
        out.objective = current_obj;
        out.stats = current;
        out.p_target = p_target;
        const std::vector<Json> rows = scatter(tr_, next_round(), std::vector<Json>(static_cast<std::size_t>(k_), Json{{"op", "assignments"}}));
        out.assignments.resize(n_, j);
        for (Index k = 0; k < k_; ++k) {
            const Matrix a = matrix_from_json(require(rows[static_cast<std::size_t>(k)], "assignments"), "assignments");
            if (a.rows() != sizes_[static_cast<std::size_t>(k)] || a.cols() != j)
                throw HostFailure(static_cast<int>(k), "assignment block has the wrong shape");
            out.assignments.middleRows(offsets_[static_cast<std::size_t>(k)], a.rows()) = a;
        }
        return out;
    }

private:
    struct Pass {
        double best_dual = -std::numeric_limits<double>::infinity();   // surrogate units
        double best_primal = std::numeric_limits<double>::infinity();  // surrogate units
        double best_objective = std::numeric_limits<double>::infinity();
        Source best_source = Source::window;
        Vector lambda_p;
    };

    int next_round() { return ++round_id_; }

    double objective_of(const MomentStats& s) const {
        const double v = coding_objective(model_from_stats(s, n_), cfg_.reg);
        if (!std::isfinite(v)) throw NumericError("coding objective became non-finite");
        return v;
    }

    void record(std::vector<TraceRecord>& sink, RestartOutcome& out, int restart, int round, double objective,
                const Pass& pass, bool committed) {
        TraceRecord rec;
        rec.restart = restart;
        rec.round = round;
        rec.primal = objective;
        rec.dual = pass.best_dual;
        rec.gap = (pass.best_primal - pass.best_dual) / (1.0 + std::abs(pass.best_primal));
        rec.committed = committed;
        out.surrogate_primal = pass.best_primal;
        out.dual = pass.best_dual;
        sink.push_back(rec);
        out.trace.push_back(rec);
    }

    MomentStats commit_source(std::optional<Source> source) {
        const Json payload{{"op", "commit"}, {"source", source ? source_name(*source) : "keep"}};
        return sum_stats(scatter(tr_, next_round(), std::vector<Json>(static_cast<std::size_t>(k_), payload)));
    }

    // T dual rounds against one tangent, then recovery of every candidate.
    // pin_means collapses the mean box onto the current cluster means.
    Pass inner_pass(const Tangent& tangent, const Vector& p_target, const Vector& lambda_p_start,
                    const MomentStats& current, bool pin_means = false) {
        const Index j = cfg_.n_clusters;
        const double n = static_cast<double>(n_);

        Json rot_json = Json::array();
        for (const Matrix& m : tangent.rotations.rotations) rot_json.push_back(to_json(m));
        const std::vector<Json> prep =
            scatter(tr_, next_round(), std::vector<Json>(static_cast<std::size_t>(k_), Json{{"op", "prepare"}, {"rotations", rot_json}}));
        MeanBox box;
        std::vector<Vector> mass(static_cast<std::size_t>(k_));
        std::vector<Matrix> first(static_cast<std::size_t>(k_));
        for (Index k = 0; k < k_; ++k) {
            const Json& r = prep[static_cast<std::size_t>(k)];
            const MeanBox b = mean_box_from_json(require(r, "box"));
            box.lo = k == 0 ? b.lo : box.lo.cwiseMin(b.lo);
            box.hi = k == 0 ? b.hi : box.hi.cwiseMax(b.hi);
            mass[static_cast<std::size_t>(k)] = vector_from_json(require(r, "mass"), "mass");
            first[static_cast<std::size_t>(k)] = matrix_from_json(require(r, "rotated_first"), "rotated_first");
        }

        Vector total_mass = Vector::Zero(j);
        Matrix total_first = Matrix::Zero(j, dim_);
        for (Index k = 0; k < k_; ++k) {
            total_mass += mass[static_cast<std::size_t>(k)];
            total_first += first[static_cast<std::size_t>(k)];
        }
        MeanBox pinned = box;
        for (Index i = 0; i < j; ++i)
            if (total_mass(i) > 0.0) pinned.lo.row(i) = pinned.hi.row(i) = total_first.row(i) / total_mass(i);
        if (pin_means) box = pinned;

        SolveParams params;
        params.rotations = tangent.rotations;
        params.beta = tangent.beta;
        params.proportions_target = p_target;
        params.n_total = n_;
        params.box = box;
        params.duals = DualVariables(j, k_, dim_);
        params.duals.p() = lambda_p_start;

        // multipliers that put every host's mean step on the global mean of
        // the current primal; they sum to zero over hosts
        for (Index k = 0; k < k_; ++k) {
            const auto slot = static_cast<std::size_t>(k);
            for (Index i = 0; i < j; ++i)
                for (Index d = 0; d < dim_; ++d) {
                    const double w = mass[slot](i) / n;
                    const double beta = tangent.beta.beta(i, d);
                    if (mass[slot](i) > 0.0 && total_mass(i) > 0.0)
                        params.duals.mu(i, k, d) =
                            2.0 * beta * w * (first[slot](i, d) / mass[slot](i) - total_first(i, d) / total_mass(i));
                }
        }

        Pass pass;
        const int t_rounds = cfg_.dual_rounds;
        const int window = (t_rounds + 1) / 2;
        if (!pin_means) {
            // MM step: every host assigns against the current global means.
            // It seeds the "first" candidate and warm-starts the dual rounds;
            // its value bounds a restricted problem, so it takes no dual step.
            SolveParams anchored = params;
            anchored.box = pinned;
            anchored.round_id = next_round();
            broadcast_and_collect(tr_, anchored, SolveFlags{true, false, false});
        }
        for (int t = 1; t <= t_rounds; ++t) {
            params.round_id = next_round();
            SolveFlags flags;
            flags.reset = pin_means && t == 1;
            flags.record = t > t_rounds - window;
            const std::vector<LocalSolveResult> results = broadcast_and_collect(tr_, params, flags);
            const double value = dual_step(params.duals, results, t, cfg_, p_target, n_, tangent.beta.beta);
            pass.best_dual = std::max(pass.best_dual, tangent.constant + value);
        }
        pass.lambda_p = params.duals.p();

        // the recovery round reuses the final PARAMS' weights for penalties
        params.round_id = next_round();
        tr_.exchange(std::vector<std::string>(static_cast<std::size_t>(k_), encode({MessageKind::params, params.round_id, to_json(params)})), false);
        const int recover_round = params.round_id;

        if (proportions_met(current, p_target, n_))
            pass.best_primal = std::min(pass.best_primal, surrogate_value(tangent, current, n_, p_target));
        const ClusterModel current_model = model_from_stats(current, n_);
        for (Source source : {Source::window, Source::last, Source::first}) {
            const std::vector<Json> cand = scatter_at(recover_round, Json{{"op", "candidate"}, {"source", source_name(source)}});
            const Matrix hm = host_masses(cand, j);
            const std::vector<Matrix> flows = mass_flows(hm, p_target * n);
            const MomentStats cs = sum_stats(cand);
            Matrix means(j, dim_);
            for (Index i = 0; i < j; ++i) {
                const Vector mu = cs.mass(i) > 0.0 ? Vector(cs.first[static_cast<std::size_t>(i)] / cs.mass(i))
                                                   : current_model.means[static_cast<std::size_t>(i)];
                means.row(i) = (tangent.rotations.rotations[static_cast<std::size_t>(i)] * mu).transpose();
            }
            std::vector<Json> payloads;
            for (Index k = 0; k < k_; ++k)
                payloads.push_back(Json{{"op", "recover"},
                                        {"source", source_name(source)},
                                        {"flows", to_json(flows[static_cast<std::size_t>(k)])},
                                        {"means", to_json(means)}});
            const MomentStats repaired = sum_stats(scatter(tr_, recover_round, payloads));
            const double obj = objective_of(repaired);
            pass.best_primal = std::min(pass.best_primal, surrogate_value(tangent, repaired, n_, p_target));
            if (obj < pass.best_objective) {
                pass.best_objective = obj;
                pass.best_source = source;
            }
        }
        if (!std::isfinite(pass.best_dual) || !std::isfinite(pass.best_primal))
            throw NumericError("non-finite bound in round " + std::to_string(recover_round));
        return pass;
    }

    std::vector<Json> scatter_at(int round, const Json& payload) {
        return scatter(tr_, round, std::vector<Json>(static_cast<std::size_t>(k_), payload));
    }

    Transport& tr_;
    const CoordinatorConfig& cfg_;
    Index k_ = 0;
    Index dim_ = 0;
    Index n_ = 0;
    std::vector<Index> offsets_;
    std::vector<Index> sizes_;
    int round_id_ = 0;
};

}  // namespace

ClusteringResult run_clustering(Transport& transport, const CoordinatorConfig& config, const ShardLayout* layout) {
    config.validate();
    Driver driver(transport, config);
    const Index n = driver.n_total();
    if (layout) {
        layout->validate(n);
        if (layout->n_hosts() != transport.n_hosts()) throw ConfigError("shard layout and host count differ");
        for (int k = 0; k < layout->n_hosts(); ++k)
            if (static_cast<Index>(layout->shards[static_cast<std::size_t>(k)].size()) != driver.sizes()[static_cast<std::size_t>(k)])
                throw ConfigError("shard layout disagrees with host " + std::to_string(k) + "'s shard size");
    }

    std::mt19937_64 master(config.seed);
    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < config.restarts; ++r) seeds.push_back(master());
    const std::uint64_t rounding_seed = master();

    ClusteringResult result;
    RestartOutcome best;
    for (int r = 0; r < config.restarts; ++r) {
        RestartOutcome out = driver.run(r, seeds[static_cast<std::size_t>(r)], result.trace);
        if (out.objective < best.objective) {
            best = std::move(out);
            result.best_restart = r;
        }
    }

    Matrix a = best.assignments;
    if (layout) {
        Matrix ordered(n, config.n_clusters);
        for (int k = 0; k < layout->n_hosts(); ++k) {
            const auto& rows = layout->shards[static_cast<std::size_t>(k)];
            for (std::size_t r = 0; r < rows.size(); ++r)
                ordered.row(rows[r]) = a.row(driver.offsets()[static_cast<std::size_t>(k)] + static_cast<Index>(r));
        }
        a = std::move(ordered);
    }
    result.soft_assignments = AssignmentMatrix{std::move(a)};
    result.labels = round_assignments(result.soft_assignments, config.rounding_mode, rounding_seed);
    result.objective = best.objective;
    result.surrogate_primal = best.surrogate_primal;
    result.dual_value = best.dual;
    result.duality_gap_estimate = (best.surrogate_primal - best.dual) / (1.0 + std::abs(best.surrogate_primal));
    result.rounds_used = best.rounds;
    result.proportions_target = best.p_target;
    result.model = model_from_stats(best.stats, n);
    return result;
}

Json result_to_json(const ClusteringResult& r, const CoordinatorConfig& config, const std::string& labels_path) {
    Json model{{"proportions", to_json(r.model.proportions)}};
    Json means = Json::array(), covs = Json::array();
    for (const Vector& m : r.model.means) means.push_back(to_json(m));
    for (const Matrix& c : r.model.covariances) covs.push_back(to_json(c));
    model["means"] = std::move(means);
    model["covariances"] = std::move(covs);
    Json trace = Json::array();
    for (const TraceRecord& t : r.trace)
        trace.push_back(Json{{"restart", t.restart}, {"round", t.round}, {"primal", t.primal}, {"dual", t.dual}, {"gap", t.gap}});
    return Json{{"config", to_json(config)},
                {"labels_path", labels_path},
                {"n_samples", r.labels.size()},
                {"objective", r.objective},
                {"surrogate_primal", r.surrogate_primal},
                {"dual_value", r.dual_value},
                {"duality_gap_estimate", r.duality_gap_estimate},
                {"rounds_used", r.rounds_used},
                {"best_restart", r.best_restart},
                {"proportions_target", to_json(r.proportions_target)},
                {"model", std::move(model)},
                {"trace", std::move(trace)}};
}

std::string trace_csv(const ClusteringResult& r) {
    std::ostringstream out;
    out << "restart,round,primal,dual,gap\n";
    for (const TraceRecord& t : r.trace)
        out << t.restart << ',' << t.round << ',' << format_double(t.primal) << ',' << format_double(t.dual) << ','
            << format_double(t.gap) << '\n';
    return out.str();
}

}  // namespace dwclust
