#pragma once

#include <stdexcept>
#include <string>

namespace ccn {

// Dimension disagreement between operands.
struct ShapeError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// Invalid configuration, or a data split that leaves nothing to work with.
struct ConfigError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// API called out of order (e.g. optimizer step before any backward pass).
struct UsageError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

// Predictions, targets or ensemble members that refer to different recordings or lengths.
struct AlignmentError : UsageError
{
  using UsageError::UsageError;
};

enum class FormatErrc
{
  BadMagic,
  UnsupportedVersion,
  Truncated,
  BadHeader,
  SizeMismatch,
  ParameterMismatch,
  ChecksumMismatch,
  DtypeMismatch,
};

auto to_string(FormatErrc code) -> std::string;

// Malformed checkpoint bytes.
struct FormatError : std::runtime_error
{
  FormatError(FormatErrc c, std::string const &what)
    : std::runtime_error(what)
    , code(c)
  {
  }
  FormatErrc code;
};

enum class LoadErrc
{
  MissingFile,
  BadManifest,
  LengthMismatch,
  NonFinite,
  Io,
};

auto to_string(LoadErrc code) -> std::string;

// Recording or prediction directory that cannot be read back.
struct LoadError : std::runtime_error
{
  LoadError(LoadErrc c, std::string const &what)
    : std::runtime_error(what)
    , code(c)
  {
  }
  LoadErrc code;
};

} // namespace ccn
