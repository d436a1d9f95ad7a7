#ifndef MRES_ERRORS_HPP
#define MRES_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mres {

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct SumMismatch : std::runtime_error {
  explicit SumMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyEvaluation : std::runtime_error {
  explicit EmptyEvaluation(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateUnion : std::runtime_error {
  explicit DegenerateUnion(const std::string& what) : std::runtime_error(what) {}
};

struct SchemaError : std::runtime_error {
  SchemaError(const std::string& what, long line = -1, const std::string& field = "")
      : std::runtime_error(format(what, line, field)), line_number(line), field_name(field) {}
  long line_number;
  std::string field_name;

 private:
  static std::string format(const std::string& what, long line, const std::string& field) {
    std::string msg = what;
    if (line >= 0) msg += " (line " + std::to_string(line) + ")";
    if (!field.empty()) msg += " [field: " + field + "]";
    return msg;
  }
};

struct MissingImage : std::runtime_error {
  explicit MissingImage(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyExpression : std::runtime_error {
  explicit EmptyExpression(const std::string& what) : std::runtime_error(what) {}
};

struct InvalidBox : std::runtime_error {
  explicit InvalidBox(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyName : std::runtime_error {
  explicit EmptyName(const std::string& what) : std::runtime_error(what) {}
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigMismatch : std::runtime_error {
  explicit ConfigMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct BackendError : std::runtime_error {
  explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mres

#endif  // MRES_ERRORS_HPP
