#include "unirep/common.hpp"

namespace unirep {

int exit_code_for(errc code) noexcept {
  switch (code) {
    case errc::usage:
      return 1;
    case errc::shape_mismatch:
    case errc::invalid_axis:
    case errc::invalid_argument:
    case errc::bad_format:
    case errc::bad_version:
    case errc::truncated:
    case errc::missing_payload:
    case errc::validation:
    case errc::infeasible_episode:
    case errc::io:
      return 2;
    case errc::domain_error:
    case errc::numeric:
    case errc::degenerate:
    case errc::missing_gradient:
    case errc::divergence:
      return 3;
  }
  return 3;
}

const char* errc_name(errc code) noexcept {
  switch (code) {
    case errc::usage: return "usage";
    case errc::shape_mismatch: return "shape_mismatch";
    case errc::invalid_axis: return "invalid_axis";
    case errc::invalid_argument: return "invalid_argument";
    case errc::bad_format: return "bad_format";
    case errc::bad_version: return "bad_version";
    case errc::truncated: return "truncated";
    case errc::missing_payload: return "missing_payload";
    case errc::validation: return "validation";
    case errc::infeasible_episode: return "infeasible_episode";
    case errc::io: return "io";
    case errc::domain_error: return "domain_error";
    case errc::numeric: return "numeric";
    case errc::degenerate: return "degenerate";
    case errc::missing_gradient: return "missing_gradient";
    case errc::divergence: return "divergence";
  }
  return "unknown";
}

void fail(errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace unirep
