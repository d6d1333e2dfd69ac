// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace bae {

// Invalid arguments are reported with std::invalid_argument. The types below
// cover the remaining failure classes; the CLI maps each one to an exit code.

/// Input that is well-formed but numerically degenerate (all-zero channel set, zero channel).
class DegenerateInputError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Bad or inconsistent configuration.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed, truncated or corrupted artifact file, or an I/O failure.
class FormatError : public std::runtime_error {
  public:
    enum class Kind { Io, BadMagic, Version, Truncated, Checksum, Schema };

    FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

  private:
    Kind kind_;
};

/// Training produced a non-finite loss.
class TrainingFailure : public std::runtime_error {
  public:
    TrainingFailure(int epoch, const std::string& what)
        : std::runtime_error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

    int epoch() const noexcept { return epoch_; }

  private:
    int epoch_;
};

}  // namespace bae
