#include "dwclust/host.hpp"

#include "dwclust/coordinator.hpp"
#include "dwclust/kernels.hpp"
#include "dwclust/protocol.hpp"

namespace dwclust {

HostSession::HostSession(Matrix shard) : shard_(std::move(shard)) {
    if (shard_.rows() < 1 || shard_.cols() < 1) throw ConfigError("host shard is empty");
    if (!shard_.allFinite()) throw ConfigError("host shard contains non-finite values");
}

std::optional<std::string> HostSession::handle(std::string_view line) {
    int round = 0;
    try {
        const Message msg = decode(line);
        round = msg.round;
        switch (msg.kind) {
            case MessageKind::hello: {
                const Json& id = require(msg.payload, "host_id");
                const Json& k = require(msg.payload, "n_hosts");
                if (!id.is_number_integer() || !k.is_number_integer() || k.get<int>() < 1 ||
                    id.get<int>() < 0 || id.get<int>() >= k.get<int>())
                    throw ProtocolError("HELLO needs 0 <= host_id < n_hosts");
                host_id_ = id.get<int>();
                n_hosts_ = k.get<int>();
                Json info{{"host_id", host_id_}, {"n_samples", shard_.rows()}, {"dim", shard_.cols()}};
                return encode({MessageKind::shard_info, round, std::move(info)});
            }
            case MessageKind::params:
                params_.reset();
                params_error_.reset();
                try {
                    SolveParams p = solve_params_from_json(msg.payload);
                    p.validate(p.rotations.n_clusters(), shard_.cols());
                    if (p.round_id != round) throw ProtocolError("PARAMS round_id disagrees with envelope");
                    params_ = std::move(p);
                } catch (const Error& e) {
                    params_error_ = e.what();
                }
                return std::nullopt;
            case MessageKind::solve: {
                const Json& op = require(msg.payload, "op");
                if (!op.is_string()) throw ProtocolError("SOLVE op must be a string");
                Json body = dispatch(op.get<std::string>(), round, msg.payload);
                body["op"] = op;
                return encode({MessageKind::result, round, std::move(body)});
            }
            case MessageKind::done:
                finished_ = true;
                return std::nullopt;
            default:
                throw ProtocolError("host does not accept " + std::string(kind_name(msg.kind)));
        }
    } catch (const std::exception& e) {
        return encode({MessageKind::error, round, Json{{"message", e.what()}}});
    }
}

const RotatedShard& HostSession::cache_for(const std::vector<Matrix>& rotations) {
    if (!cache_ || cache_rotations_ != rotations) {
        RotationSet rs;
        rs.rotations = rotations;
        rs.rotated_variances = Matrix::Ones(static_cast<Index>(rotations.size()), shard_.cols());
        cache_ = transform_shard(shard_, rs);
        cache_rotations_ = rotations;
    }
    return *cache_;
}

const SolveParams& HostSession::current_params(int round) const {
    if (params_error_) throw ConfigError("invalid PARAMS: " + *params_error_);
    if (!params_) throw ProtocolError("SOLVE before PARAMS");
    if (params_->round_id != round)
        throw StaleMessageError("SOLVE for round " + std::to_string(round) + " but PARAMS are for round " +
                                std::to_string(params_->round_id));
    return *params_;
}

Json HostSession::stats_of(const Matrix& a) const {
    return Json{{"stats", to_json(kernels::moment_stats(shard_, a, kernels::Exec::serial))}};
}

HostSession::Source HostSession::source_from(const Json& payload) {
    const Json& s = require(payload, "source");
    if (s == "window") return window;
    if (s == "last") return last;
    if (s == "first") return first;
    throw ProtocolError("unknown recovery source");
}

Json HostSession::dispatch(const std::string& op, int round, const Json& payload) {
    if (host_id_ < 0) throw ProtocolError("SOLVE before HELLO");
    if (op == "init") {
        Matrix a = matrix_from_json(require(payload, "assignments"), "assignments");
        if (a.rows() != shard_.rows() || a.cols() < 1) throw ProtocolError("init assignments do not match the shard");
        const AssignmentDiagnostics diag = validate_assignment(AssignmentMatrix{a});
        if (!diag.ok) throw ProtocolError("init assignments are not row-stochastic");
        current_ = std::move(a);
        last_.resize(0, 0);
        first_.resize(0, 0);
        window_sum_.resize(0, 0);
        window_count_ = 0;
        candidate_ = {};
        repaired_ = {};
        return stats_of(current_);
    }
    if (current_.size() == 0) throw ProtocolError("SOLVE op '" + op + "' before init");
    if (op == "prepare") {
        std::vector<Matrix> rotations;
        const Json& rj = require(payload, "rotations");
        if (!rj.is_array()) throw ProtocolError("rotations must be an array");
        for (const Json& m : rj) rotations.push_back(matrix_from_json(m, "rotations"));
        if (static_cast<Index>(rotations.size()) != current_.cols())
            throw ProtocolError("one rotation per cluster required");
        for (const Matrix& m : rotations)
            if (m.rows() != shard_.cols() || m.cols() != shard_.cols())
                throw ProtocolError("rotation shape does not match the shard dimension");
        const RotatedShard& cache = cache_for(rotations);
        Matrix rotated_first(current_.cols(), shard_.cols());
        for (Index i = 0; i < current_.cols(); ++i)
            rotated_first.row(i) =
                (cache.rotated[static_cast<std::size_t>(i)].transpose() * current_.col(i)).transpose();
        return Json{{"box", to_json(cache.box)},
                    {"mass", to_json(Vector(current_.colwise().sum().transpose()))},
                    {"rotated_first", to_json(rotated_first)}};
    }
    if (op == "solve") {
        const SolveParams& p = current_params(round);
        if (p.duals.n_hosts() != n_hosts_) throw ProtocolError("lambda_mu host count differs from HELLO");
        if (p.rotations.n_clusters() != current_.cols()) throw ProtocolError("cluster count changed since init");
        const bool reset = require(payload, "reset").get<bool>();
        const bool record = require(payload, "record").get<bool>();
        const auto want = payload.find("assignments");
        const bool with_assignments = want != payload.end() && want->get<bool>();
        if (reset) {
            last_.resize(0, 0);
            window_sum_ = Matrix::Zero(current_.rows(), current_.cols());
            window_count_ = 0;
        }
        const Matrix& warm = last_.size() == 0 ? current_ : last_;
        LocalSolveResult r = solve_local(cache_for(p.rotations.rotations), p, host_id_, warm);
        last_ = r.local_assignments;
        if (reset) first_ = last_;
        if (record) {
            if (window_sum_.size() == 0) window_sum_ = Matrix::Zero(current_.rows(), current_.cols());
            window_sum_ += last_;
            ++window_count_;
        }
        return to_json(r, with_assignments);
    }
    if (op == "candidate") {
        const Source s = source_from(payload);
        if (s == window) {
            if (window_count_ == 0) throw ProtocolError("no recorded solves to average");
            candidate_[s] = window_sum_ / static_cast<double>(window_count_);
        } else {
            const Matrix& from = s == last ? last_ : first_;
            if (from.size() == 0) throw ProtocolError("no solve to recover from");
            candidate_[s] = from;
        }
        return stats_of(candidate_[s]);
    }
    if (op == "recover") {
        const Source s = source_from(payload);
        if (candidate_[s].size() == 0) throw ProtocolError("recover before candidate");
        const SolveParams& p = current_params(round);
        const Matrix flows = matrix_from_json(require(payload, "flows"), "flows");
        const Matrix means = matrix_from_json(require(payload, "means"), "means");
        const Index j = current_.cols();
        if (flows.rows() != j || flows.cols() != j || means.rows() != j || means.cols() != shard_.cols())
            throw ProtocolError("recover payload has the wrong shape");
        const Matrix penalty = repair_penalty(cache_for(p.rotations.rotations), p.beta.beta, means);
        Matrix a = candidate_[s];
        repair_masses(a, flows, penalty);
        repaired_[s] = std::move(a);
        return stats_of(repaired_[s]);
    }
    if (op == "commit") {
        const Json& src = require(payload, "source");
        if (src != "keep") {
            const Source s = source_from(payload);
            if (repaired_[s].size() == 0) throw ProtocolError("commit before recover");
            current_ = repaired_[s];
        }
        return stats_of(current_);
    }
    if (op == "assignments") return Json{{"assignments", to_json(current_)}};
    throw ProtocolError("unknown SOLVE op '" + op + "'");
}

}  // namespace dwclust
