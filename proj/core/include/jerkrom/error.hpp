// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace jerkrom {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent configuration. `key()` names the offending entry
/// when one can be identified.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

private:
  std::string key_;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

/// On-disk data does not match its manifest.
class CorruptionError : public Error {
public:
  using Error::Error;
};

class VersionError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// A time integrator (PDE or latent ODE) produced non-finite values.
class SolverBlowupError : public Error {
public:
  SolverBlowupError(const std::string& what, double last_finite_time)
      : Error(what), last_finite_time_(last_finite_time) {}
  double last_finite_time() const noexcept { return last_finite_time_; }

private:
  double last_finite_time_;
};

/// A training loop hit a non-finite loss.
class TrainingDivergedError : public Error {
public:
  using Error::Error;
};

/// A metric is undefined for the given input (e.g. zero-norm reference).
class MetricError : public Error {
public:
  using Error::Error;
};

} // namespace jerkrom
