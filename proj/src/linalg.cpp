#include "unirep/linalg.hpp"

#include <cmath>

#include "unirep/common.hpp"

namespace unirep {

std::vector<double> cholesky_lower(const std::vector<double>& a, std::size_t d) {
  if (a.size() != d * d) fail(errc::invalid_argument, "cholesky: bad matrix size");
  std::vector<double> l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (!(s > 0.0))
          fail(errc::numeric, "cholesky: matrix is not positive definite (pivot " +
                                  std::to_string(s) + ")");
        l[i * d + i] = std::sqrt(s);
      } else {
        l[i * d + j] = s / l[j * d + j];
      }
    }
  }
  return l;
}

std::vector<double> lower_triangular_inverse(const std::vector<double>& l, std::size_t d) {
  if (l.size() != d * d) fail(errc::invalid_argument, "triangular inverse: bad matrix size");
  std::vector<double> inv(d * d, 0.0);
  for (std::size_t col = 0; col < d; ++col) {
    inv[col * d + col] = 1.0 / l[col * d + col];
    for (std::size_t i = col + 1; i < d; ++i) {
      double s = 0.0;
      for (std::size_t k = col; k < i; ++k) s += l[i * d + k] * inv[k * d + col];
      inv[i * d + col] = -s / l[i * d + i];
    }
  }
  return inv;
}

std::vector<double> spd_inverse(const std::vector<double>& a, std::size_t d) {
  if (a.size() != d * d) fail(errc::invalid_argument, "spd_inverse: bad matrix size");
  std::vector<double> m = a;
  std::vector<double> inv(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) inv[i * d + i] = 1.0;
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(m[r * d + col]) > std::abs(m[pivot * d + col])) pivot = r;
    if (std::abs(m[pivot * d + col]) < 1e-300)
      fail(errc::numeric, "spd_inverse: singular matrix");
    if (pivot != col) {
      for (std::size_t j = 0; j < d; ++j) {
        std::swap(m[pivot * d + j], m[col * d + j]);
        std::swap(inv[pivot * d + j], inv[col * d + j]);
      }
    }
    double p = m[col * d + col];
    for (std::size_t j = 0; j < d; ++j) {
      m[col * d + j] /= p;
      inv[col * d + j] /= p;
    }
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      double factor = m[r * d + col];
      if (factor == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) {
        m[r * d + j] -= factor * m[col * d + j];
        inv[r * d + j] -= factor * inv[col * d + j];
      }
    }
  }
  return inv;
}

}  // namespace unirep
