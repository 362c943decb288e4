#ifndef DWCLUST_ERRORS_HPP
#define DWCLUST_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dwclust {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid inputs, inconsistent dimensions, bad flags.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Non-finite values, non-positive regularized determinants, eigensolver failure.
class NumericError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

class DecodeError : public ProtocolError {
public:
    DecodeError(const std::string& what, std::size_t byte_offset)
        : ProtocolError(what + " (byte " + std::to_string(byte_offset) + ")"),
          offset_(byte_offset) {}
    std::size_t byte_offset() const { return offset_; }

private:
    std::size_t offset_;
};

class StaleMessageError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class HostFailure : public Error {
public:
    HostFailure(int host_id, const std::string& what)
        : Error("host " + std::to_string(host_id) + ": " + what), host_(host_id) {}
    int host_id() const { return host_; }

private:
    int host_;
};

}  // namespace dwclust

#endif  // DWCLUST_ERRORS_HPP
