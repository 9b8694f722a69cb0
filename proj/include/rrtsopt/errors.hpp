#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rrtsopt {

/// Raised when an id (obstacle, variant label, ...) does not resolve.
class LookupError : public std::out_of_range
{
public:
  using std::out_of_range::out_of_range;
};

/// Dimension mismatches and other precondition violations on arguments.
class ArgumentError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

/// Start or goal configuration is in collision.
class InfeasibleEndpointError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// A path or trajectory with (near) zero length.
class DegeneratePathError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Broken internal bookkeeping (e.g. split divisibility).
class InternalError : public std::logic_error
{
public:
  using std::logic_error::logic_error;
};

/// The planner gave up; message carries diagnostics.
class PlanningFailure : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Scenario / suite validation failure, anchored to a source line when known.
class ValidationError : public std::runtime_error
{
public:
  ValidationError(std::string file, std::size_t line, const std::string & what)
      : std::runtime_error(format(file, line, what)), file_(std::move(file)), line_(line)
  {}

  [[nodiscard]] const std::string & file() const noexcept { return file_; }
  /// 1-based; 0 when no line could be attributed.
  [[nodiscard]] std::size_t line() const noexcept { return line_; }

private:
  static std::string format(const std::string & file, std::size_t line, const std::string & what)
  {
    std::string out = file.empty() ? std::string("<input>") : file;
    if (line > 0) out += ":" + std::to_string(line);
    return out + ": " + what;
  }

  std::string file_;
  std::size_t line_;
};

class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

}  // namespace rrtsopt
