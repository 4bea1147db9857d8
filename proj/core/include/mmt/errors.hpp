// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

namespace mmt {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not agree with what an operation requires.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation precondition (e.g. attention over a fully masked block).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problems with input data: manifests, feature files, stores.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A binary file does not follow its declared framing.
class FormatError : public DataError {
 public:
  FormatError(const std::filesystem::path& path, const std::string& reason);
  const std::filesystem::path& path() const noexcept { return path_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::filesystem::path path_;
  std::string reason_;
};

/// A referenced file does not exist.
class MissingFileError : public DataError {
 public:
  explicit MissingFileError(const std::filesystem::path& path);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

/// A record references an id that is not defined (e.g. caption -> unknown video).
class DanglingReferenceError : public DataError {
 public:
  using DataError::DataError;
};

/// Two entries share a name that must be unique.
class DuplicateNameError : public DataError {
 public:
  using DataError::DataError;
};

/// Semantic validation failure in otherwise well-formed data.
class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

/// A timestamp falls outside [0, t_max).
class TimeRangeError : public DataError {
 public:
  using DataError::DataError;
};

/// A checkpoint was produced by a model with a different structural configuration.
class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmt
