#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace pnode {

enum class ErrorKind {
  kDimension,
  kInvalidArgument,
  kConfig,
  kNonFinite,
  kSingularInnovation,
  kStepSizeUnderflow,
  kMissingJacobian,
  kStepLimit,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension mismatch";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kConfig: return "invalid configuration";
    case ErrorKind::kNonFinite: return "non-finite value";
    case ErrorKind::kSingularInnovation: return "singular innovation";
    case ErrorKind::kStepSizeUnderflow: return "step-size underflow";
    case ErrorKind::kMissingJacobian: return "missing jacobian";
    case ErrorKind::kStepLimit: return "step limit reached";
  }
  return "error";
}

/// Library exception. Carries a kind, and optionally the step phase and the
/// time at which the failure happened.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::optional<double> t = std::nullopt,
        std::string phase = {})
      : std::runtime_error(compose(kind, message, t, phase)),
        kind_(kind),
        t_(t),
        phase_(std::move(phase)),
        detail_(message) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
  [[nodiscard]] std::optional<double> time() const noexcept { return t_; }
  [[nodiscard]] const std::string& phase() const noexcept { return phase_; }
  [[nodiscard]] const std::string& detail() const noexcept { return detail_; }

  /// Same error, tagged with the phase it surfaced in.
  [[nodiscard]] Error in_phase(const std::string& phase, std::optional<double> t) const {
    return Error(kind_, detail_, t_ ? t_ : t, phase);
  }

 private:
  static std::string compose(ErrorKind kind, const std::string& message, std::optional<double> t,
                             const std::string& phase) {
    std::string out = to_string(kind);
    if (!phase.empty()) {
      out += " in phase '" + phase + "'";
    }
    if (t) {
      out += " at t=" + std::to_string(*t);
    }
    out += ": " + message;
    return out;
  }

  ErrorKind kind_;
  std::optional<double> t_;
  std::string phase_;
  std::string detail_;
};

}  // namespace pnode
