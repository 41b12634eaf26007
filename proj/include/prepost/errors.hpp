#ifndef PREPOST_ERRORS_HPP
#define PREPOST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace prepost {

enum class errc {
  invalid_input,
  insufficient_data,
  degenerate_variance,
  degenerate_covariate,
  zero_residual,
  division_by_zero,
  refused_size,
  numerical_failure,
  schema_error,
  config_error,
  io_error,
};

// All library failures are reported through this type; code() drives the
// CLI exit-code mapping (data/degeneracy vs numerical failure).
class Error : public std::runtime_error {
public:
  Error(errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  errc code() const noexcept { return code_; }

private:
  errc code_;
};

const char* errc_name(errc code) noexcept;

}  // namespace prepost

#endif
