#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sganc {

// Every failure surfaced by the library derives from Error so callers (and the
// CLI) can map categories to exit codes without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or container. `offset` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class UnsupportedVersion : public FormatError {
 public:
  UnsupportedVersion(unsigned version, std::size_t offset)
      : FormatError("unsupported version " + std::to_string(version), offset), version_(version) {}
  unsigned version() const noexcept { return version_; }

 private:
  unsigned version_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class CodingError : public Error {
 public:
  CodingError(const std::string& what, std::size_t position)
      : Error(what + " (symbol position " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t position)
      : Error(what + " (position " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class ChecksumError : public DecodeError {
 public:
  using DecodeError::DecodeError;
};

class DigestMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sganc
