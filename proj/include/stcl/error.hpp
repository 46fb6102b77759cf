#pragma once

#include <stdexcept>
#include <string>

namespace stcl {

/// Invalid configuration: mismatched channel counts, bad kernel sizes,
/// unsupported mode combinations. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A caller broke a precondition of an operation (shape mismatch,
/// missing forward cache, empty mask where one is required).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Malformed or truncated on-disk data. Maps to CLI exit code 2.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Metric undefined for the given inputs (e.g. Dice of two empty volumes).
class MetricError : public std::domain_error {
 public:
  explicit MetricError(const std::string& what) : std::domain_error(what) {}
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

inline void require_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace detail
}  // namespace stcl
