#pragma once

#include <stdexcept>
#include <string>

namespace bafpn {

// Shape/contract violations on tensor operations.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

// Invalid input values (e.g. sqrt of a negative element).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};

// API misuse: non-scalar loss, missing gradients, and similar.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Bad configuration value; message names the offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// Malformed checkpoint file; carries the byte offset of the defect.
struct FormatError : std::runtime_error {
  FormatError(const std::string& msg, std::size_t offset)
      : std::runtime_error("format error at byte " + std::to_string(offset) + ": " + msg),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

// Parameter name not present in the target registry.
struct NameError : std::runtime_error {
  explicit NameError(const std::string& msg) : std::runtime_error("name error: " + msg) {}
};

}  // namespace bafpn
