#pragma once

// Test-only oracles, independent of the library's computation paths.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "unirep/tensor.hpp"

namespace oracle {

// Central finite differences of a rebuilt scalar loss against the autodiff
// gradient. Returns the largest relative error over all parameter entries.
inline double max_grad_rel_err(const std::function<unirep::Tensor()>& make_loss,
                               std::vector<unirep::Tensor> params, double step = 1e-5) {
  using unirep::Tensor;
  for (auto& p : params) p.zero_grad();
  Tensor loss = make_loss();
  unirep::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto buf = params[pi].raw_data();
    for (std::size_t k = 0; k < buf.size(); ++k) {
      double saved = buf[k];
      buf[k] = saved + step;
      double up = make_loss().item();
      buf[k] = saved - step;
      double down = make_loss().item();
      buf[k] = saved;
      double fd = (up - down) / (2.0 * step);
      double ad = analytic[pi][k];
      double err = std::abs(fd - ad) / std::max({1e-6, std::abs(fd), std::abs(ad)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Plain triple-loop matrix product, independent of the tensor engine.
inline std::vector<double> matmul_ref(const std::vector<double>& a, const std::vector<double>& b,
                                      std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

// CKA dissimilarity evaluated in extended precision with explicit H.
inline double cka_ref(const std::vector<double>& p, const std::vector<double>& t, std::size_t n) {
  std::vector<long double> h(n * n, -1.0L / static_cast<long double>(n));
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] += 1.0L;
  auto mm = [n](const std::vector<long double>& a, const std::vector<long double>& b) {
    std::vector<long double> c(n * n, 0.0L);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        long double s = 0.0L;
        for (std::size_t k = 0; k < n; ++k) s += a[i * n + k] * b[k * n + j];
        c[i * n + j] = s;
      }
    return c;
  };
  auto trace_of = [n](const std::vector<long double>& a) {
    long double s = 0.0L;
    for (std::size_t i = 0; i < n; ++i) s += a[i * n + i];
    return s;
  };
  std::vector<long double> pl(p.begin(), p.end()), tl(t.begin(), t.end());
  auto phth = mm(mm(mm(pl, h), tl), h);
  auto phph = mm(mm(mm(pl, h), pl), h);
  auto thth = mm(mm(mm(tl, h), tl), h);
  long double num = trace_of(phth);
  long double den = sqrtl(trace_of(phph) * trace_of(thth));
  return static_cast<double>(1.0L - num / den);
}

// Solve A x = b by Gaussian elimination with partial pivoting (test-local).
inline std::vector<double> solve_ref(std::vector<double> a, std::vector<double> b, std::size_t d) {
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r * d + col]) > std::abs(a[pivot * d + col])) pivot = r;
    for (std::size_t j = 0; j < d; ++j) std::swap(a[pivot * d + j], a[col * d + j]);
    std::swap(b[pivot], b[col]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      double f = a[r * d + col] / a[col * d + col];
      for (std::size_t j = 0; j < d; ++j) a[r * d + j] -= f * a[col * d + j];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = b[i] / a[i * d + i];
  return x;
}

// Random SPD matrix A = G G^T + eps I via std::mt19937 (independent stream).
inline std::vector<double> random_spd(std::size_t d, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> g(d * d);
  for (auto& v : g) v = normal(gen);
  std::vector<double> a(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += g[i * d + k] * g[j * d + k];
      a[i * d + j] = s;
    }
  for (std::size_t i = 0; i < d; ++i) a[i * d + i] += 0.05;
  return a;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Unique scratch directory under the system temp root.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("unirep-test-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle
