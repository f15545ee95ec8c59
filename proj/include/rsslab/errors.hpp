#pragma once
#include <stdexcept>
#include <string>

namespace rsslab {

// Raised when an object cannot be built from its inputs (infeasible
// population, perfect strategy without a positive threshold profit, ...).
struct ConstructionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Configuration parse/validation failure; `key` names the offending field.
struct ConfigError : std::runtime_error {
  std::string key;
  ConfigError(std::string k, const std::string& what)
      : std::runtime_error(what), key(std::move(k)) {}
};

}  // namespace rsslab
