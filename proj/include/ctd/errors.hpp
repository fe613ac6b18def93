#pragma once

#include <stdexcept>
#include <string>

namespace ctd {

// Caller supplied parameters that violate a documented invariant.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical routine was evaluated outside the domain it supports.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// An internal cross-check failed beyond its tolerance.
class ConsistencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent run configuration. `where` names the file
// position or field that was rejected.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : std::runtime_error(where.empty() ? what : where + ": " + what), where_(where) {}

  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

}  // namespace ctd
