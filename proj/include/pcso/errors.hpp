#pragma once

#include <stdexcept>
#include <string>

namespace pcso {

// Caller violated a documented precondition (bad address, oversize payload...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Internal invariant broken; continuing would corrupt state.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed snapshot file or script.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exhaustive crash-state enumeration would exceed the caller's limit.
class LimitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Log or set has no room for another entry.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Durable control data cannot be interpreted (e.g. corrupt head word).
class RecoveryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pcso
