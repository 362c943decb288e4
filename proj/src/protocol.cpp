#include "dwclust/protocol.hpp"

#include <array>
#include <cmath>

namespace dwclust {

namespace {

constexpr std::array<std::string_view, 7> kKindNames = {"HELLO",  "SHARD_INFO", "PARAMS", "SOLVE",
                                                        "RESULT", "DONE",       "ERROR"};

double number_from_json(const Json& j, const char* field) {
    if (!j.is_number()) throw ProtocolError(std::string("field '") + field + "' must be numeric");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw ProtocolError(std::string("field '") + field + "' is not finite");
    return v;
}

std::vector<Matrix> matrices_from_json(const Json& j, const char* field) {
    if (!j.is_array()) throw ProtocolError(std::string("field '") + field + "' must be an array");
    std::vector<Matrix> out;
    for (const Json& m : j) out.push_back(matrix_from_json(m, field));
    return out;
}

Json matrices_to_json(const std::vector<Matrix>& ms) {
    Json arr = Json::array();
    for (const Matrix& m : ms) arr.push_back(to_json(m));
    return arr;
}

Json vectors_to_json(const std::vector<Vector>& vs) {
    Json arr = Json::array();
    for (const Vector& v : vs) arr.push_back(to_json(v));
    return arr;
}

std::vector<Vector> vectors_from_json(const Json& j, const char* field) {
    if (!j.is_array()) throw ProtocolError(std::string("field '") + field + "' must be an array");
    std::vector<Vector> out;
    for (const Json& v : j) out.push_back(vector_from_json(v, field));
    return out;
}

}  // namespace

std::string_view kind_name(MessageKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

MessageKind kind_from_name(std::string_view name) {
    for (std::size_t k = 0; k < kKindNames.size(); ++k)
        if (kKindNames[k] == name) return static_cast<MessageKind>(k);
    throw ProtocolError("unknown message kind '" + std::string(name) + "'");
}

std::string encode(const Message& msg) {
    if (msg.round < 0) throw ProtocolError("round must be non-negative");
    Json env = Json::object();
    env["kind"] = kind_name(msg.kind);
    env["round"] = msg.round;
    env["payload"] = msg.payload;
    std::string line = env.dump();
    line.push_back('\n');
    return line;
}

Message decode(std::string_view line) {
    if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
    Json env;
    try {
        env = Json::parse(line.begin(), line.end());
    } catch (const Json::parse_error& e) {
        throw DecodeError(std::string("malformed message: ") + e.what(), e.byte);
    }
    if (!env.is_object()) throw ProtocolError("message must be a JSON object");
    const auto kind = env.find("kind");
    const auto round = env.find("round");
    const auto payload = env.find("payload");
    if (kind == env.end() || !kind->is_string()) throw ProtocolError("message lacks a string 'kind'");
    if (round == env.end() || !round->is_number_integer() || round->get<long long>() < 0 ||
        round->get<long long>() > std::numeric_limits<int>::max())
        throw ProtocolError("message lacks a non-negative integer 'round'");
    if (payload == env.end() || !payload->is_object())
        throw ProtocolError("message lacks an object 'payload'");
    Message msg;
    msg.kind = kind_from_name(kind->get<std::string>());
    msg.round = round->get<int>();
    msg.payload = *payload;
    return msg;
}

Json to_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Json to_json(const Vector& v) {
    Json arr = Json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Matrix matrix_from_json(const Json& j, const char* field) {
    if (!j.is_array()) throw ProtocolError(std::string("field '") + field + "' must be a matrix");
    const auto rows = static_cast<Index>(j.size());
    const Index cols = rows == 0 ? 0 : (j[0].is_array() ? static_cast<Index>(j[0].size()) : -1);
    if (cols < 0) throw ProtocolError(std::string("field '") + field + "' must be a matrix");
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        const Json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<Index>(row.size()) != cols)
            throw ProtocolError(std::string("field '") + field + "' has ragged rows");
        for (Index c = 0; c < cols; ++c) m(r, c) = number_from_json(row[static_cast<std::size_t>(c)], field);
    }
    return m;
}

Vector vector_from_json(const Json& j, const char* field) {
    if (!j.is_array()) throw ProtocolError(std::string("field '") + field + "' must be a vector");
    Vector v(static_cast<Index>(j.size()));
    for (Index i = 0; i < v.size(); ++i) v(i) = number_from_json(j[static_cast<std::size_t>(i)], field);
    return v;
}

const Json& require(const Json& obj, const char* field) {
    if (!obj.is_object()) throw ProtocolError("payload must be an object");
    const auto it = obj.find(field);
    if (it == obj.end()) throw ProtocolError(std::string("payload lacks '") + field + "'");
    return *it;
}

Json to_json(const MeanBox& b) { return Json{{"lo", to_json(b.lo)}, {"hi", to_json(b.hi)}}; }

MeanBox mean_box_from_json(const Json& j) {
    MeanBox b;
    b.lo = matrix_from_json(require(j, "lo"), "lo");
    b.hi = matrix_from_json(require(j, "hi"), "hi");
    if (b.lo.rows() != b.hi.rows() || b.lo.cols() != b.hi.cols())
        throw ProtocolError("box bounds differ in shape");
    return b;
}

Json to_json(const SolveParams& p) {
    Json j = Json::object();
    j["round_id"] = p.round_id;
    j["rotations"] = matrices_to_json(p.rotations.rotations);
    j["rotated_variances"] = to_json(p.rotations.rotated_variances);
    j["beta"] = to_json(p.beta.beta);
    j["proportions"] = to_json(p.proportions_target);
    Json lambda_mu = Json::array();
    for (Index i = 0; i < p.duals.n_clusters(); ++i) {
        Json per_host = Json::array();
        for (Index k = 0; k < p.duals.n_hosts(); ++k) {
            Json coords = Json::array();
            for (Index d = 0; d < p.duals.dim(); ++d) coords.push_back(p.duals.mu(i, k, d));
            per_host.push_back(std::move(coords));
        }
        lambda_mu.push_back(std::move(per_host));
    }
    j["lambda_mu"] = std::move(lambda_mu);
    j["lambda_p"] = to_json(p.duals.p());
    j["n_total"] = p.n_total;
    if (p.box) j["box"] = to_json(*p.box);
    return j;
}

SolveParams solve_params_from_json(const Json& j) {
    SolveParams p;
    const Json& round = require(j, "round_id");
    if (!round.is_number_integer()) throw ProtocolError("round_id must be an integer");
    p.round_id = round.get<int>();
    p.rotations.rotations = matrices_from_json(require(j, "rotations"), "rotations");
    p.rotations.rotated_variances = matrix_from_json(require(j, "rotated_variances"), "rotated_variances");
    p.beta.beta = matrix_from_json(require(j, "beta"), "beta");
    p.proportions_target = vector_from_json(require(j, "proportions"), "proportions");
    const Json& lm = require(j, "lambda_mu");
    const Index n_clusters = static_cast<Index>(lm.is_array() ? lm.size() : 0);
    if (n_clusters == 0 || !lm[0].is_array() || lm[0].empty() || !lm[0][0].is_array())
        throw ProtocolError("lambda_mu must be a J x K x D array");
    const auto n_hosts = static_cast<Index>(lm[0].size());
    const auto dim = static_cast<Index>(lm[0][0].size());
    p.duals = DualVariables(n_clusters, n_hosts, dim);
    for (Index i = 0; i < n_clusters; ++i) {
        const Matrix block = matrix_from_json(lm[static_cast<std::size_t>(i)], "lambda_mu");
        if (block.rows() != n_hosts || block.cols() != dim)
            throw ProtocolError("lambda_mu must be a J x K x D array");
        for (Index k = 0; k < n_hosts; ++k)
            for (Index d = 0; d < dim; ++d) p.duals.mu(i, k, d) = block(k, d);
    }
    p.duals.p() = vector_from_json(require(j, "lambda_p"), "lambda_p");
    const Json& n_total = require(j, "n_total");
    if (!n_total.is_number_integer()) throw ProtocolError("n_total must be an integer");
    p.n_total = n_total.get<Index>();
    if (const auto box = j.find("box"); box != j.end()) p.box = mean_box_from_json(*box);
    return p;
}

Json to_json(const MomentStats& s) {
    return Json{{"mass", to_json(s.mass)},
                {"raw_first", vectors_to_json(s.first)},
                {"raw_second", matrices_to_json(s.second)}};
}

MomentStats moment_stats_from_json(const Json& j) {
    MomentStats s;
    s.mass = vector_from_json(require(j, "mass"), "mass");
    s.first = vectors_from_json(require(j, "raw_first"), "raw_first");
    s.second = matrices_from_json(require(j, "raw_second"), "raw_second");
    if (static_cast<Index>(s.first.size()) != s.mass.size() ||
        static_cast<Index>(s.second.size()) != s.mass.size())
        throw ProtocolError("moment statistics disagree on the cluster count");
    return s;
}

Json to_json(const LocalSolveResult& r, bool with_assignments) {
    Json j = Json::object();
    j["f_star"] = r.f_star;
    j["f_lower"] = r.f_lower;
    j["mu_hat"] = to_json(r.mu_hat);
    j["cluster_mass"] = to_json(r.cluster_mass);
    j["rotated_first"] = to_json(r.rotated_first_moment);
    j["raw_first"] = vectors_to_json(r.raw_first_moment);
    j["raw_second"] = matrices_to_json(r.raw_second_moment);
    j["sweeps"] = r.sweeps;
    j["max_ascent"] = r.max_ascent;
    if (with_assignments) j["assignments"] = to_json(r.local_assignments);
    return j;
}

LocalSolveResult solve_result_from_json(const Json& j) {
    LocalSolveResult r;
    r.f_star = number_from_json(require(j, "f_star"), "f_star");
    r.f_lower = number_from_json(require(j, "f_lower"), "f_lower");
    r.mu_hat = matrix_from_json(require(j, "mu_hat"), "mu_hat");
    r.cluster_mass = vector_from_json(require(j, "cluster_mass"), "cluster_mass");
    r.rotated_first_moment = matrix_from_json(require(j, "rotated_first"), "rotated_first");
    r.raw_first_moment = vectors_from_json(require(j, "raw_first"), "raw_first");
    r.raw_second_moment = matrices_from_json(require(j, "raw_second"), "raw_second");
    const Json& sweeps = require(j, "sweeps");
    if (!sweeps.is_number_integer()) throw ProtocolError("sweeps must be an integer");
    r.sweeps = sweeps.get<int>();
    r.max_ascent = number_from_json(require(j, "max_ascent"), "max_ascent");
    if (const auto a = j.find("assignments"); a != j.end()) r.local_assignments = matrix_from_json(*a, "assignments");
    return r;
}

}  // namespace dwclust
