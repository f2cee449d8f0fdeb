#pragma once

#include <stdexcept>
#include <string>

namespace pil {

enum class ErrorKind { Config, Numerical, Io, Shape };

/// Base exception for the library. The kind is what the CLI maps to an exit code.
class Error : public std::runtime_error
{
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

struct ConfigError : Error
{
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

struct NumericalError : Error
{
  explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

struct IoError : Error
{
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

struct ShapeError : Error
{
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, what) {}
};

const char* to_string(ErrorKind kind);

}  // namespace pil
