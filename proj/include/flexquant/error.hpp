// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace flexquant {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or axis mismatch between operands.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Invalid or unsupported configuration value (bit-width, option, plan/model mismatch).
class ConfigError : public Error {
public:
  using Error::Error;
};

// Invalid input payload (token out of vocabulary, empty sequence, duplicate id).
class InputError : public Error {
public:
  using Error::Error;
};

// Operation called on an object in the wrong state.
class StateError : public Error {
public:
  using Error::Error;
};

// Malformed file or serialized record.
class FormatError : public Error {
public:
  using Error::Error;
};

// Fixed-capacity resource (sequence length, cache) exhausted.
class CapacityError : public Error {
public:
  using Error::Error;
};

} // namespace flexquant
