#pragma once

#include <stdexcept>
#include <string>

namespace defrec {

/// Broad failure category. The CLI maps these onto exit codes 1, 2 and 3.
enum class ErrorKind {
  InvalidArgument,  ///< caller violated a precondition (bad flag, bad parameter)
  Data,             ///< malformed or inconsistent input data
  Numerical,        ///< non-finite loss or activation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorKind::InvalidArgument, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

}  // namespace defrec
