#ifndef DWCLUST_HOST_HPP
#define DWCLUST_HOST_HPP

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "dwclust/local_solver.hpp"
#include "dwclust/protocol.hpp"

namespace dwclust {

// Protocol state machine of one database host. It holds the shard and the
// host's share of the primal assignment; only statistics leave it.
//
// SOLVE payloads carry an "op":
//   init         {"assignments"}             set the current assignment
//   prepare      {"rotations"}               rotated box and first moments
//   solve        {"reset","record","assignments"?}  local subproblem under PARAMS
//   candidate    {"source": window|last|first}  statistics of a recovery candidate
//   recover      {"source","flows","means"}  repair candidate masses
//   commit       {"source": window|last|first|keep}
//   assignments  {}                          current assignment rows
class HostSession {
public:
    explicit HostSession(Matrix shard);

    // Reply line for a request line, or nothing (PARAMS, DONE). Never throws:
    // every failure becomes an ERROR reply and the session stays usable.
    std::optional<std::string> handle(std::string_view line);

    bool finished() const { return finished_; }
    Index shard_size() const { return shard_.rows(); }

private:
    enum Source { window = 0, last = 1, first = 2 };

    Json dispatch(const std::string& op, int round, const Json& payload);
    const RotatedShard& cache_for(const std::vector<Matrix>& rotations);
    const SolveParams& current_params(int round) const;
    Json stats_of(const Matrix& a) const;
    static Source source_from(const Json& payload);

    Matrix shard_;
    int host_id_ = -1;
    int n_hosts_ = 0;
    bool finished_ = false;

    std::optional<SolveParams> params_;
    std::optional<std::string> params_error_;
    std::optional<RotatedShard> cache_;
    std::vector<Matrix> cache_rotations_;

    Matrix current_;
    Matrix last_;
    Matrix first_;  // first solve after a reset
    Matrix window_sum_;
    int window_count_ = 0;
    std::array<Matrix, 3> candidate_;
    std::array<Matrix, 3> repaired_;
};

}  // namespace dwclust

#endif  // DWCLUST_HOST_HPP
