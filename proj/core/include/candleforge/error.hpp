#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace candleforge {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller passed a value outside the operation's domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Missing or inconsistent configuration (style geometry, offline mode without fixtures, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Data loaded successfully but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Malformed text input. `location` is a 1-based line number or a 0-based byte offset
// depending on the source; the message says which.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t location)
      : Error(what), location_(location) {}

  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

// Network failure talking to the exchange. Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace candleforge
