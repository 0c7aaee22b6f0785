#pragma once

#include <cstddef>
#include <vector>

namespace unirep {

// Dense row-major d x d helpers for the covariance-metric classifier.

// Lower Cholesky factor L with A = L L^T. Fails (errc::numeric) if A is not
// positive definite.
std::vector<double> cholesky_lower(const std::vector<double>& a, std::size_t d);

// Inverse of a lower triangular matrix by forward substitution.
std::vector<double> lower_triangular_inverse(const std::vector<double>& l, std::size_t d);

// Inverse of a symmetric positive definite matrix via Gauss-Jordan with
// partial pivoting.
std::vector<double> spd_inverse(const std::vector<double>& a, std::size_t d);

}  // namespace unirep
