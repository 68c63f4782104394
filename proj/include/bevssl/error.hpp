#pragma once

#include <stdexcept>
#include <string>

namespace bevssl {

// Base of every error raised by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or incompatible shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A forward computation produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace bevssl
