#pragma once

#include <stdexcept>
#include <string>

namespace partmix {

// Bad caller input: wrong shapes, out-of-range indices, invalid config.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  ConfigError(std::string path, const std::string& what)
      : ValidationError(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class SamplingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Retrieval protocol cannot be evaluated (query without any true match, empty sets).
class ProtocolError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Candidate generation found nothing to mix with; the trainer skips the anchor.
class EmptyPoolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values, zero-norm vectors, domain violations of numeric primitives.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace partmix
