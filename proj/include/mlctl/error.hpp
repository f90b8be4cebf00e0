#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mlctl {

// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data or a missing file. The CLI maps these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

class IoError : public InputError {
 public:
  IoError(const std::string& path, const std::string& what)
      : InputError(what + ": " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : InputError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Shape mismatch, precondition violation or misuse of the API.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN / inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlctl
