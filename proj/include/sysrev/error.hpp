#pragma once

#include <stdexcept>
#include <string>

namespace sysrev {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { usage = 1, data = 2, remote = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Invalid input data: duplicate ids, dangling references, empty text, ...
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

// Remote service unreachable, timed out, or returned non-200.
class RemoteError : public Error {
 public:
  RemoteError(std::string endpoint, const std::string& what)
      : Error(ErrorKind::remote, what), endpoint_(std::move(endpoint)) {}

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
};

// Remote service answered, but the payload violates the wire protocol.
class ProtocolError : public RemoteError {
 public:
  ProtocolError(std::string endpoint, const std::string& what)
      : RemoteError(std::move(endpoint), what) {}
};

}  // namespace sysrev
