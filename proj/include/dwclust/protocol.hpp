#ifndef DWCLUST_PROTOCOL_HPP
#define DWCLUST_PROTOCOL_HPP

#include <string>
#include <string_view>

#include "json.hpp"
#include "dwclust/local_solver.hpp"

namespace dwclust {

using Json = nlohmann::json;

enum class MessageKind { hello, shard_info, params, solve, result, done, error };

std::string_view kind_name(MessageKind kind);
// Throws ProtocolError for names outside the protocol.
MessageKind kind_from_name(std::string_view name);

struct Message {
    MessageKind kind = MessageKind::hello;
    int round = 0;
    Json payload = Json::object();

    bool operator==(const Message& other) const = default;
};

// One JSON object per line, newline-terminated:
// {"kind":"PARAMS","round":3,"payload":{...}}. Doubles use the shortest
// representation that reads back to the same bits.
std::string encode(const Message& msg);
// Accepts the line with or without its trailing newline. Malformed JSON
// throws DecodeError carrying the byte offset; a wrong envelope or an
// unknown kind throws ProtocolError.
Message decode(std::string_view line);

// Payload pieces. Matrices travel as row-major nested arrays; readers check
// shapes and finiteness and throw ProtocolError on mismatch.
Json to_json(const Matrix& m);
Json to_json(const Vector& v);
Matrix matrix_from_json(const Json& j, const char* field);
Vector vector_from_json(const Json& j, const char* field);
const Json& require(const Json& obj, const char* field);

Json to_json(const SolveParams& p);
SolveParams solve_params_from_json(const Json& j);

Json to_json(const MomentStats& s);
MomentStats moment_stats_from_json(const Json& j);

// RESULT body of a solve; assignments are included only on request since
// they grow with the shard.
Json to_json(const LocalSolveResult& r, bool with_assignments);
LocalSolveResult solve_result_from_json(const Json& j);

Json to_json(const MeanBox& b);
MeanBox mean_box_from_json(const Json& j);

}  // namespace dwclust

#endif  // DWCLUST_PROTOCOL_HPP
