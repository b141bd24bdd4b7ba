#pragma once

#include <stdexcept>
#include <string>

namespace cplae {

// Error taxonomy shared by every module. All derive from std::runtime_error so
// callers that do not care about the category can catch one type.

class DimensionError : public std::runtime_error {
 public:
  explicit DimensionError(const std::string& what) : std::runtime_error("dimension error: " + what) {}
};

class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error("domain error: " + what) {}
};

class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error("contract error: " + what) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error("config error: " + what) {}
};

class IngestionError : public std::runtime_error {
 public:
  explicit IngestionError(const std::string& what) : std::runtime_error("ingestion error: " + what) {}
};

class SamplingError : public std::runtime_error {
 public:
  explicit SamplingError(const std::string& what) : std::runtime_error("sampling error: " + what) {}
};

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error("checkpoint error: " + what) {}
};

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error("training error: " + what) {}
};

}  // namespace cplae
