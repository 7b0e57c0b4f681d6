/**
 * @file errors.hpp
 * @brief Exception categories shared by the library and mapped to CLI exit
 * codes (usage 2, data 3, numeric 4).
 */
#pragma once

#include <stdexcept>
#include <string>

namespace csifb {

/// Tensor extents that do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values produced or consumed where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed, truncated or mismatched files and streams.
class DataError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kVersionMismatch, kTruncated, kExtentMismatch, kCorrupt, kIo };

  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Invalid configuration or command-line input.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace csifb
