#pragma once

#include <stdexcept>
#include <string>

namespace guild {

// Bad input from the outside world: files, configs, CLI flags, shape mismatches.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller broke an API precondition. These are bugs, not user errors.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace guild
