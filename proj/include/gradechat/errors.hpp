#pragma once

#include <stdexcept>
#include <string>

namespace gradechat {

// Failure categories map onto CLI exit codes (see tools/gradechat.cpp).
enum class ErrorKind { validation, capability, io, transport, not_found, conflict, expired };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

// A provider or backend cannot do what was asked (no logprob access, missing scorer, ...).
struct CapabilityError : Error {
  explicit CapabilityError(const std::string& what) : Error(ErrorKind::capability, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

struct NotFoundError : Error {
  explicit NotFoundError(const std::string& what) : Error(ErrorKind::not_found, what) {}
};

struct ConflictError : Error {
  explicit ConflictError(const std::string& what) : Error(ErrorKind::conflict, what) {}
};

// An idle session past its window.
struct ExpiredError : Error {
  explicit ExpiredError(const std::string& what) : Error(ErrorKind::expired, what) {}
};

// Remote transport failure. `retryable` and `retry_after_s` let callers schedule a retry.
struct TransportError : Error {
  TransportError(const std::string& what, int status, bool retryable, double retry_after_s = 0.0)
      : Error(ErrorKind::transport, what),
        status(status),
        retryable(retryable),
        retry_after_s(retry_after_s) {}
  int status;
  bool retryable;
  double retry_after_s;
};

struct AuthError : TransportError {
  AuthError(const std::string& what, int status) : TransportError(what, status, false) {}
};

// Tokenizer backend could not be reached or returned garbage.
struct BackendError : Error {
  explicit BackendError(const std::string& what) : Error(ErrorKind::capability, what) {}
};

}  // namespace gradechat
