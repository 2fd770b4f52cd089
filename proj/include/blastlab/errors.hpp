#pragma once

#include <stdexcept>
#include <string>

namespace blastlab {

/// Shape or dimension mismatch between tensors, layers, or episode batches.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Violation of an operation precondition (empty dataset, non-scalar loss, ...).
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

/// Invalid or inconsistent configuration values.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite quantity detected where training must abort (exit code 4).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// A required upstream artifact is missing (exit code 3).
class MissingArtifactError : public std::runtime_error {
 public:
  MissingArtifactError(const std::string& what, std::string producer)
      : std::runtime_error(what), producing_subcommand(std::move(producer)) {}
  std::string producing_subcommand;
};

}  // namespace blastlab
