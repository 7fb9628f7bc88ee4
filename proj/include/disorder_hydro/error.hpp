#pragma once

#include <stdexcept>
#include <string>

namespace disorder_hydro {

/// Failure categories. The CLI maps them onto process exit codes.
enum class error_kind {
  invalid_spec,
  domain,
  state_space_too_large,
  disconnected_lattice,
  non_mean_zero,
  non_convergence,
  insufficient_samples,
  io,
};

class error : public std::runtime_error {
 public:
  error(error_kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  error_kind kind() const noexcept { return kind_; }

  /// 2 for validation-type failures, 3 for numerical ones.
  int exit_code() const noexcept {
    switch (kind_) {
      case error_kind::non_convergence:
      case error_kind::insufficient_samples:
        return 3;
      default:
        return 2;
    }
  }

 private:
  error_kind kind_;
};

[[noreturn]] inline void fail(error_kind kind, const std::string& what) {
  throw error(kind, what);
}

inline void require(bool cond, error_kind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace disorder_hydro
