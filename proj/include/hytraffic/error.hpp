#pragma once

#include <stdexcept>
#include <string>

namespace hytraffic {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scenario loading. Every scenario error names the file it originates from.

class ScenarioError : public Error {
public:
  ScenarioError(std::string file, const std::string& what)
      : Error(file + ": " + what), m_file(std::move(file)) {}
  const std::string& file() const noexcept { return m_file; }

private:
  std::string m_file;
};

class FileNotFound : public ScenarioError {
public:
  explicit FileNotFound(const std::string& path)
      : ScenarioError(path, "file not found") {}
};

class SyntaxError : public ScenarioError {
public:
  SyntaxError(const std::string& path, long line, const std::string& detail)
      : ScenarioError(path, "syntax error at line " + std::to_string(line) + ": " + detail),
        m_line(line) {}
  long line() const noexcept { return m_line; }

private:
  long m_line;
};

class DanglingReference : public ScenarioError {
public:
  DanglingReference(const std::string& path, std::string id)
      : ScenarioError(path, "dangling reference '" + id + "'"), m_id(std::move(id)) {}
  const std::string& id() const noexcept { return m_id; }

private:
  std::string m_id;
};

class SchemaViolation : public ScenarioError {
public:
  SchemaViolation(const std::string& path, std::string field, const std::string& reason)
      : ScenarioError(path, "schema violation in '" + field + "': " + reason),
        m_field(std::move(field)) {}
  const std::string& field() const noexcept { return m_field; }

private:
  std::string m_field;
};

// ---------------------------------------------------------------------------
// Model and engine errors.

class Unreachable : public Error {
public:
  Unreachable(const std::string& origin, const std::string& destination)
      : Error("no route from road '" + origin + "' to sink '" + destination + "'") {}
};

class NonPositiveGap : public Error {
public:
  explicit NonPositiveGap(double gap)
      : Error("IDM called with non-positive gap " + std::to_string(gap)) {}
};

class DesiredSpeedReached : public Error {
public:
  explicit DesiredSpeedReached(double v)
      : Error("no equilibrium gap at or above desired speed (v=" + std::to_string(v) + ")") {}
};

class DensityOutOfRange : public Error {
public:
  explicit DensityOutOfRange(double rho)
      : Error("density out of range: " + std::to_string(rho)) {}
};

class CflViolation : public Error {
public:
  CflViolation(double dt, double dx)
      : Error("CFL violated: dt=" + std::to_string(dt) + " for cell length " + std::to_string(dx)),
        m_dt(dt), m_dx(dx) {}
  double dt() const noexcept { return m_dt; }
  double dx() const noexcept { return m_dx; }

private:
  double m_dt;
  double m_dx;
};

class OverCapacity : public Error {
public:
  using Error::Error;
};

class TooSmall : public Error {
public:
  using Error::Error;
};

class NotAdjacent : public Error {
public:
  using Error::Error;
};

class RepresentationMismatch : public Error {
public:
  using Error::Error;
};

class OverlapDetected : public Error {
public:
  using Error::Error;
};

class UnknownTarget : public Error {
public:
  using Error::Error;
};

}  // namespace hytraffic
