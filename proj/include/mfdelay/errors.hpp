#pragma once

#include <stdexcept>
#include <string>

namespace mfd {

/// Incompatible tensor or vector dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An API was called outside its contract (empty batch, non-scalar loss, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid model or grid configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Training produced non-finite values or blew past the divergence guard.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long epoch)
      : std::runtime_error(what), epoch_(epoch) {}
  long epoch() const noexcept { return epoch_; }

 private:
  long epoch_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mfd
