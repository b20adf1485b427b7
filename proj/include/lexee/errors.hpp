#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lexee {

// Exit-code classes used by the command line tool. Library code throws typed
// exceptions; the tool maps them onto these process exit codes.
enum class ErrorClass : int {
    Usage = 2,
    Parse = 3,
    Convergence = 4,
    Identifiability = 5,
    Numeric = 6,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorClass cls, const std::string& message)
        : std::runtime_error(message), class_(cls) {}

    [[nodiscard]] ErrorClass error_class() const { return class_; }
    [[nodiscard]] int exit_code() const { return static_cast<int>(class_); }
    [[nodiscard]] virtual const char* kind() const { return "Error"; }

  private:
    ErrorClass class_;
};

// A model description violated a structural rule. Collects every violation.
class SpecError : public Error {
  public:
    explicit SpecError(std::vector<std::string> violations)
        : Error(ErrorClass::Usage, join(violations)), violations_(std::move(violations)) {}

    [[nodiscard]] const std::vector<std::string>& violations() const { return violations_; }
    [[nodiscard]] const char* kind() const override { return "SpecError"; }

  private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "model description is invalid:";
        for (const auto& s : v) out += "\n  - " + s;
        return out;
    }
    std::vector<std::string> violations_;
};

// Parameter values outside the admissible region (non-positive variance,
// correlation outside (-1, 1), covariance matrix not positive definite, ...).
class BadParam : public Error {
  public:
    explicit BadParam(const std::string& message) : Error(ErrorClass::Numeric, message) {}
    [[nodiscard]] const char* kind() const override { return "BadParam"; }
};

// A matrix that must be invertible is numerically singular.
class Singular : public Error {
  public:
    explicit Singular(const std::string& message) : Error(ErrorClass::Numeric, message) {}
    [[nodiscard]] const char* kind() const override { return "Singular"; }
};

// A regression design has linearly dependent columns.
class RankDeficient : public Error {
  public:
    RankDeficient(const std::string& message, std::vector<std::string> columns)
        : Error(ErrorClass::Identifiability, message), columns_(std::move(columns)) {}
    [[nodiscard]] const std::vector<std::string>& columns() const { return columns_; }
    [[nodiscard]] const char* kind() const override { return "RankDeficient"; }

  private:
    std::vector<std::string> columns_;
};

// An iterative fit ran out of iterations. Carries whatever diagnostics the
// caller attached (best objective, residual norm of the equations, ...).
class NotConverged : public Error {
  public:
    NotConverged(const std::string& message, int iterations, double residual)
        : Error(ErrorClass::Convergence, message), iterations_(iterations), residual_(residual) {}
    [[nodiscard]] int iterations() const { return iterations_; }
    [[nodiscard]] double residual() const { return residual_; }
    [[nodiscard]] const char* kind() const override { return "NotConverged"; }

  private:
    int iterations_;
    double residual_;
};

// The information matrix at the optimum is singular: the data do not pin
// down every free parameter.
class Unidentified : public Error {
  public:
    explicit Unidentified(const std::string& message)
        : Error(ErrorClass::Identifiability, message) {}
    [[nodiscard]] const char* kind() const override { return "Unidentified"; }
};

// Numeric differentiation produced step-size-dependent answers.
class NumericJacobianFailure : public Error {
  public:
    explicit NumericJacobianFailure(const std::string& message)
        : Error(ErrorClass::Numeric, message) {}
    [[nodiscard]] const char* kind() const override { return "NumericJacobianFailure"; }
};

// Malformed input text (CSV cell, config file, design file).
class ParseError : public Error {
  public:
    ParseError(const std::string& file, long line, long column, const std::string& reason)
        : Error(ErrorClass::Parse, format(file, line, column, reason)),
          file_(file), line_(line), column_(column), reason_(reason) {}

    [[nodiscard]] long line() const { return line_; }
    [[nodiscard]] long column() const { return column_; }
    [[nodiscard]] const std::string& reason() const { return reason_; }
    [[nodiscard]] const char* kind() const override { return "ParseError"; }

  private:
    static std::string format(const std::string& file, long line, long column,
                              const std::string& reason) {
        std::string where = file.empty() ? "input" : file;
        if (line >= 0) where += ":" + std::to_string(line);
        if (column >= 0) where += ":" + std::to_string(column);
        return where + ": " + reason;
    }
    std::string file_;
    long line_;
    long column_;
    std::string reason_;
};

// The two data files do not join: an outcome row references an id missing
// from the subject table.
class JoinError : public Error {
  public:
    explicit JoinError(const std::string& message) : Error(ErrorClass::Parse, message) {}
    [[nodiscard]] const char* kind() const override { return "JoinError"; }
};

// A covariate column required by the model is absent or has an empty cell.
class MissingCovariate : public Error {
  public:
    explicit MissingCovariate(const std::string& message) : Error(ErrorClass::Parse, message) {}
    [[nodiscard]] const char* kind() const override { return "MissingCovariate"; }
};

// A simulation design file is inconsistent.
class BadDesign : public Error {
  public:
    explicit BadDesign(const std::string& message) : Error(ErrorClass::Usage, message) {}
    [[nodiscard]] const char* kind() const override { return "BadDesign"; }
};

}  // namespace lexee
