#ifndef DWCLUST_TRANSPORT_HPP
#define DWCLUST_TRANSPORT_HPP

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dwclust/host.hpp"
#include "dwclust/protocol.hpp"

namespace dwclust {

// Line-level channel to K hosts. Both backends move the same encoded bytes.
class Transport {
public:
    virtual ~Transport() = default;
    virtual int n_hosts() const = 0;
    // Sends lines[k] to host k (empty string: nothing to send). With
    // `expect_reply`, waits for one reply line from every host that was sent
    // something and returns them by host id.
    virtual std::vector<std::string> exchange(const std::vector<std::string>& lines, bool expect_reply) = 0;
    // Records every line sent and received when set.
    std::function<void(int host, bool outgoing, const std::string& line)> tap;
};

// Hosts simulated in this process, served concurrently with OpenMP.
class InProcessTransport : public Transport {
public:
    explicit InProcessTransport(const std::vector<Matrix>& shards);
    int n_hosts() const override { return static_cast<int>(sessions_.size()); }
    std::vector<std::string> exchange(const std::vector<std::string>& lines, bool expect_reply) override;

private:
    std::vector<HostSession> sessions_;
};

// One TCP connection per host, addresses "HOST:PORT".
class TcpTransport : public Transport {
public:
    explicit TcpTransport(const std::vector<std::string>& addresses,
                          std::chrono::milliseconds timeout = std::chrono::seconds(60));
    ~TcpTransport() override;
    TcpTransport(const TcpTransport&) = delete;
    TcpTransport& operator=(const TcpTransport&) = delete;

    int n_hosts() const override { return static_cast<int>(fds_.size()); }
    std::vector<std::string> exchange(const std::vector<std::string>& lines, bool expect_reply) override;

private:
    std::vector<int> fds_;
    std::vector<std::string> pending_;
    std::chrono::milliseconds timeout_;
};

struct ShardInfo {
    int host_id = 0;
    Index n_samples = 0;
    Index dim = 0;
};

// HELLO to every host; returns the SHARD_INFO replies in host order.
std::vector<ShardInfo> hello(Transport& transport);

// Sends one SOLVE per host (payloads[k]) for `round` and returns the RESULT
// payloads in host order. An ERROR reply becomes HostFailure naming the
// host; a reply for another round becomes StaleMessageError.
std::vector<Json> scatter(Transport& transport, int round, const std::vector<Json>& payloads);

// PARAMS followed by SOLVE {op:"solve"} to every host.
struct SolveFlags {
    bool reset = false;
    bool record = false;
    bool collect_assignments = false;
};
std::vector<LocalSolveResult> broadcast_and_collect(Transport& transport, const SolveParams& params,
                                                    const SolveFlags& flags);

// DONE to every host.
void shutdown(Transport& transport);

// Listens on "HOST:PORT" (port 0 picks a free one, reported through
// `on_listening`), accepts one coordinator connection and serves it until
// DONE or end of stream. Throws ConfigError when the address cannot be bound.
void serve_host(const Matrix& shard, const std::string& listen,
                const std::function<void(int port)>& on_listening = {});

}  // namespace dwclust

#endif  // DWCLUST_TRANSPORT_HPP
