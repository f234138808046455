#pragma once

#include <stdexcept>
#include <string>

namespace swmpc {

/// Bad argument to a library call (shape mismatch, invalid weights, ...).
class InputError : public std::invalid_argument {
public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Inconsistent problem setup (blocking arithmetic, config file contents).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// The integrator produced a non-finite state.
class IntegrationDivergedError : public std::runtime_error {
public:
  explicit IntegrationDivergedError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values inside an optimization routine.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace swmpc
