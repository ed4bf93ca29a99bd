// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mrlab {

/// Input sequence exceeds the model context.
struct LengthError : std::length_error {
  using std::length_error::length_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Illegal state transition, e.g. attaching a second adapter.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// A judge could not produce a judgment (transport failure, unparseable reply).
struct JudgeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RoundError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed file content (checkpoint, JSONL record).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Configuration validation failure; `field` is the dotted path of the offending key.
struct ConfigError : std::runtime_error {
  ConfigError(std::string field_path, const std::string& message)
      : std::runtime_error(field_path + ": " + message), field(std::move(field_path)) {}
  std::string field;
};

}  // namespace mrlab
