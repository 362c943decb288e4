#include "dwclust/transport.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

namespace dwclust {

namespace {

struct Address {
    std::string host;
    std::string port;
};

Address parse_address(const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon + 1 == text.size())
        throw ConfigError("address '" + text + "' must be HOST:PORT");
    Address a{text.substr(0, colon), text.substr(colon + 1)};
    if (a.host.empty()) a.host = "0.0.0.0";
    return a;
}

std::string errno_text() { return std::strerror(errno); }

void send_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error("send failed: " + errno_text());
        }
        sent += static_cast<std::size_t>(n);
    }
}

// Moves a complete line (without newline) out of `buffer`, if there is one.
bool take_line(std::string& buffer, std::string& line) {
    const auto nl = buffer.find('\n');
    if (nl == std::string::npos) return false;
    line = buffer.substr(0, nl + 1);
    buffer.erase(0, nl + 1);
    return true;
}

int connect_to(const Address& addr, std::chrono::steady_clock::time_point deadline) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    while (true) {
        addrinfo* found = nullptr;
        const int rc = ::getaddrinfo(addr.host.c_str(), addr.port.c_str(), &hints, &found);
        if (rc != 0) throw ConfigError("cannot resolve " + addr.host + ": " + ::gai_strerror(rc));
        int fd = -1;
        for (addrinfo* p = found; p != nullptr; p = p->ai_next) {
            fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(found);
        if (fd >= 0) {
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return fd;
        }
        // hosts launched just before the coordinator may not be listening yet
        if (std::chrono::steady_clock::now() >= deadline) return -1;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
}

Message expect_reply(const std::string& line, int host, int round, MessageKind kind) {
    Message msg;
    try {
        msg = decode(line);
    } catch (const ProtocolError& e) {
        throw HostFailure(host, std::string("unreadable reply: ") + e.what());
    }
    if (msg.kind == MessageKind::error) {
        const auto it = msg.payload.find("message");
        throw HostFailure(host, it != msg.payload.end() && it->is_string() ? it->get<std::string>()
                                                                           : std::string("error"));
    }
    if (msg.round != round)
        throw StaleMessageError("host " + std::to_string(host) + " answered round " + std::to_string(msg.round) +
                                " during round " + std::to_string(round));
    if (msg.kind != kind)
        throw HostFailure(host, "expected " + std::string(kind_name(kind)) + ", got " +
                                    std::string(kind_name(msg.kind)));
    return msg;
}

}  // namespace

InProcessTransport::InProcessTransport(const std::vector<Matrix>& shards) {
    if (shards.empty()) throw ConfigError("in-process transport needs at least one host");
    sessions_.reserve(shards.size());
    for (const Matrix& s : shards) sessions_.emplace_back(s);
}

std::vector<std::string> InProcessTransport::exchange(const std::vector<std::string>& lines, bool expect_reply) {
    const int k_hosts = n_hosts();
    if (static_cast<int>(lines.size()) != k_hosts) throw ConfigError("one line per host required");
    std::vector<std::string> replies(lines.size());
    std::vector<char> answered(lines.size(), 0);
    if (tap)
        for (int k = 0; k < k_hosts; ++k)
            if (!lines[static_cast<std::size_t>(k)].empty()) tap(k, true, lines[static_cast<std::size_t>(k)]);
#pragma omp parallel for schedule(dynamic)
    for (int k = 0; k < k_hosts; ++k) {
        const auto slot = static_cast<std::size_t>(k);
        if (lines[slot].empty()) continue;
        if (auto r = sessions_[slot].handle(lines[slot])) {
            replies[slot] = std::move(*r);
            answered[slot] = 1;
        }
    }
    if (expect_reply) {
        for (int k = 0; k < k_hosts; ++k) {
            const auto slot = static_cast<std::size_t>(k);
            if (lines[slot].empty()) continue;
            if (!answered[slot]) throw HostFailure(k, "no reply");
            if (tap) tap(k, false, replies[slot]);
        }
    }
    return replies;
}

TcpTransport::TcpTransport(const std::vector<std::string>& addresses, std::chrono::milliseconds timeout)
    : timeout_(timeout) {
    if (addresses.empty()) throw ConfigError("TCP transport needs at least one host address");
    const auto deadline = std::chrono::steady_clock::now() + std::min(timeout_, std::chrono::milliseconds(10000));
    for (std::size_t k = 0; k < addresses.size(); ++k) {
        const int fd = connect_to(parse_address(addresses[k]), deadline);
        if (fd < 0) {
            for (int open : fds_) ::close(open);
            fds_.clear();
            throw HostFailure(static_cast<int>(k), "cannot connect to " + addresses[k]);
        }
        fds_.push_back(fd);
    }
    pending_.resize(fds_.size());
}

TcpTransport::~TcpTransport() {
    for (int fd : fds_) ::close(fd);
}

std::vector<std::string> TcpTransport::exchange(const std::vector<std::string>& lines, bool expect_reply) {
    const int k_hosts = n_hosts();
    if (static_cast<int>(lines.size()) != k_hosts) throw ConfigError("one line per host required");
    for (int k = 0; k < k_hosts; ++k) {
        const auto slot = static_cast<std::size_t>(k);
        if (lines[slot].empty()) continue;
        if (tap) tap(k, true, lines[slot]);
        try {
            send_all(fds_[slot], lines[slot]);
        } catch (const Error& e) {
            throw HostFailure(k, e.what());
        }
    }
    std::vector<std::string> replies(lines.size());
    if (!expect_reply) return replies;

    std::vector<char> waiting(lines.size(), 0);
    int outstanding = 0;
    for (std::size_t k = 0; k < lines.size(); ++k) {
        if (lines[k].empty()) continue;
        if (take_line(pending_[k], replies[k])) continue;
        waiting[k] = 1;
        ++outstanding;
    }
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    char chunk[65536];
    while (outstanding > 0) {
        std::vector<pollfd> polls;
        std::vector<std::size_t> owner;
        for (std::size_t k = 0; k < lines.size(); ++k) {
            if (!waiting[k]) continue;
            polls.push_back({fds_[k], POLLIN, 0});
            owner.push_back(k);
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw HostFailure(static_cast<int>(owner.front()), "timed out waiting for a reply");
        const int ready = ::poll(polls.data(), polls.size(), static_cast<int>(left.count()));
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw Error("poll failed: " + errno_text());
        }
        if (ready == 0) throw HostFailure(static_cast<int>(owner.front()), "timed out waiting for a reply");
        for (std::size_t p = 0; p < polls.size(); ++p) {
            if (polls[p].revents == 0) continue;
            const std::size_t k = owner[p];
            const ssize_t n = ::recv(fds_[k], chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw HostFailure(static_cast<int>(k), "connection closed");
            pending_[k].append(chunk, static_cast<std::size_t>(n));
            if (take_line(pending_[k], replies[k])) {
                waiting[k] = 0;
                --outstanding;
            }
        }
    }
    if (tap)
        for (int k = 0; k < k_hosts; ++k)
            if (!lines[static_cast<std::size_t>(k)].empty()) tap(k, false, replies[static_cast<std::size_t>(k)]);
    return replies;
}

std::vector<ShardInfo> hello(Transport& transport) {
    const int k_hosts = transport.n_hosts();
    std::vector<std::string> lines;
    for (int k = 0; k < k_hosts; ++k)
        lines.push_back(encode({MessageKind::hello, 0, Json{{"host_id", k}, {"n_hosts", k_hosts}}}));
    const std::vector<std::string> replies = transport.exchange(lines, true);
    std::vector<ShardInfo> info;
    for (int k = 0; k < k_hosts; ++k) {
        const Message m = expect_reply(replies[static_cast<std::size_t>(k)], k, 0, MessageKind::shard_info);
        ShardInfo s;
        try {
            s.host_id = require(m.payload, "host_id").get<int>();
            s.n_samples = require(m.payload, "n_samples").get<Index>();
            s.dim = require(m.payload, "dim").get<Index>();
        } catch (const std::exception& e) {
            throw HostFailure(k, std::string("bad SHARD_INFO: ") + e.what());
        }
        if (s.host_id != k) throw HostFailure(k, "SHARD_INFO names another host");
        info.push_back(s);
    }
    return info;
}

std::vector<Json> scatter(Transport& transport, int round, const std::vector<Json>& payloads) {
    const int k_hosts = transport.n_hosts();
    if (static_cast<int>(payloads.size()) != k_hosts) throw ConfigError("one payload per host required");
    std::vector<std::string> lines;
    for (const Json& p : payloads) lines.push_back(encode({MessageKind::solve, round, p}));
    const std::vector<std::string> replies = transport.exchange(lines, true);
    std::vector<Json> out;
    for (int k = 0; k < k_hosts; ++k)
        out.push_back(expect_reply(replies[static_cast<std::size_t>(k)], k, round, MessageKind::result).payload);
    return out;
}

std::vector<LocalSolveResult> broadcast_and_collect(Transport& transport, const SolveParams& params,
                                                    const SolveFlags& flags) {
    const int k_hosts = transport.n_hosts();
    const std::string params_line = encode({MessageKind::params, params.round_id, to_json(params)});
    transport.exchange(std::vector<std::string>(static_cast<std::size_t>(k_hosts), params_line), false);
    Json solve{{"op", "solve"}, {"reset", flags.reset}, {"record", flags.record}};
    if (flags.collect_assignments) solve["assignments"] = true;
    const std::vector<Json> replies =
        scatter(transport, params.round_id, std::vector<Json>(static_cast<std::size_t>(k_hosts), solve));
    std::vector<LocalSolveResult> results;
    for (int k = 0; k < k_hosts; ++k) {
        try {
            results.push_back(solve_result_from_json(replies[static_cast<std::size_t>(k)]));
        } catch (const ProtocolError& e) {
            throw HostFailure(k, std::string("bad RESULT: ") + e.what());
        }
    }
    return results;
}

void shutdown(Transport& transport) {
    const std::string line = encode({MessageKind::done, 0, Json::object()});
    transport.exchange(std::vector<std::string>(static_cast<std::size_t>(transport.n_hosts()), line), false);
}

void serve_host(const Matrix& shard, const std::string& listen, const std::function<void(int port)>& on_listening) {
    HostSession session(shard);
    const Address addr = parse_address(listen);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* found = nullptr;
    const int rc = ::getaddrinfo(addr.host.c_str(), addr.port.c_str(), &hints, &found);
    if (rc != 0) throw ConfigError("cannot resolve " + listen + ": " + ::gai_strerror(rc));
    int server = -1;
    for (addrinfo* p = found; p != nullptr; p = p->ai_next) {
        server = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (server < 0) continue;
        int one = 1;
        ::setsockopt(server, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (::bind(server, p->ai_addr, p->ai_addrlen) == 0 && ::listen(server, 1) == 0) break;
        ::close(server);
        server = -1;
    }
    ::freeaddrinfo(found);
    if (server < 0) throw ConfigError("cannot listen on " + listen + ": " + errno_text());

    sockaddr_storage bound{};
    socklen_t len = sizeof bound;
    ::getsockname(server, reinterpret_cast<sockaddr*>(&bound), &len);
    const int port = bound.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port)
                                                 : ntohs(reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
    if (on_listening) on_listening(port);

    int conn = -1;
    while (conn < 0) {
        conn = ::accept(server, nullptr, nullptr);
        if (conn < 0 && errno != EINTR) {
            ::close(server);
            throw Error("accept failed: " + errno_text());
        }
    }
    ::close(server);
    int one = 1;
    ::setsockopt(conn, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

    std::string buffer, line;
    char chunk[65536];
    try {
        while (!session.finished()) {
            while (!session.finished() && take_line(buffer, line))
                if (auto reply = session.handle(line)) send_all(conn, *reply);
            if (session.finished()) break;
            const ssize_t n = ::recv(conn, chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) break;
            buffer.append(chunk, static_cast<std::size_t>(n));
        }
    } catch (...) {
        ::close(conn);
        throw;
    }
    ::close(conn);
}

}  // namespace dwclust
