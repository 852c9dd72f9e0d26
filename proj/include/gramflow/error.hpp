#pragma once

#include <stdexcept>
#include <string>

namespace gramflow {

/// Malformed input document or file: bad config, bad tensor file, wrong rank.
/// The CLI maps this (and argument errors) to exit code 2; everything else
/// that goes wrong at runtime maps to exit code 1.
class SchemaError : public std::runtime_error {
 public:
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

inline void require_schema(bool cond, const std::string& what) {
  if (!cond) throw SchemaError(what);
}

}  // namespace gramflow
