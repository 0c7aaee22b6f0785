#pragma once

#include <stdexcept>
#include <string>

namespace unirep {

// Error categories. Process exit codes: usage=1, data/validation=2,
// numeric/training=3.
enum class errc {
  usage,
  // data / validation
  shape_mismatch,
  invalid_axis,
  invalid_argument,
  bad_format,
  bad_version,
  truncated,
  missing_payload,
  validation,
  infeasible_episode,
  io,
  // numeric / training
  domain_error,
  numeric,
  degenerate,
  missing_gradient,
  divergence,
};

int exit_code_for(errc code) noexcept;
const char* errc_name(errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  errc code() const noexcept { return code_; }
  int exit_code() const noexcept { return exit_code_for(code_); }

 private:
  errc code_;
};

[[noreturn]] void fail(errc code, const std::string& msg);

}  // namespace unirep
