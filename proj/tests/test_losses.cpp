#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "unirep/common.hpp"
#include "unirep/losses.hpp"
#include "unirep/rng.hpp"

using namespace unirep;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Orthogonal d x d matrix via Gram-Schmidt on gaussian columns.
Tensor random_orthogonal(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> cols(d, std::vector<double>(d));
  for (auto& c : cols)
    for (auto& v : c) v = rng.normal();
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += cols[j][i] * cols[k][i];
      for (std::size_t i = 0; i < d; ++i) cols[j][i] -= dot * cols[k][i];
    }
    double norm = 0.0;
    for (double v : cols[j]) norm += v * v;
    norm = std::sqrt(norm);
    for (auto& v : cols[j]) v /= norm;
  }
  std::vector<double> flat(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) flat[i * d + j] = cols[j][i];
  return Tensor::from_data({d, d}, std::move(flat));
}

const KernelSpec kLinear{KernelKind::linear, 0.5, std::nullopt};
const KernelSpec kRbfMedian{KernelKind::rbf, 0.5, std::nullopt};

}  // namespace

TEST_CASE("linear gram of unit rows is the identity") {
  Tensor x = Tensor::from_data({2, 3}, {1, 0, 0, 0, 1, 0});
  Tensor g = gram(x, kLinear);
  CHECK(g.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g.at(0, 1) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g.at(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rbf gram has an exactly-unit diagonal") {
  Rng rng(1);
  Tensor x = random_tensor({6, 4}, rng);
  Tensor g = gram(x, kRbfMedian);
  for (std::size_t i = 0; i < 6; ++i) CHECK(g.at(i, i) == 1.0);
}

TEST_CASE("rbf gram with sigma 1 matches the pairwise-distance oracle") {
  std::vector<std::vector<double>> pts{{0.0, 0.0}, {1.0, 0.5}, {-0.5, 2.0}};
  Tensor x = Tensor::from_data({3, 2}, {0, 0, 1, 0.5, -0.5, 2});
  KernelSpec spec{KernelKind::rbf, 0.5, 1.0};
  Tensor g = gram(x, spec);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double d2 = 0.0;
      for (int k = 0; k < 2; ++k) d2 += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
      CHECK(std::abs(g.at(i, j) - std::exp(-d2 / 2.0)) < 1e-12);
    }
}

TEST_CASE("gram rejects tiny inputs and degenerate rbf bandwidth") {
  CHECK_THROWS_AS(gram(Tensor::ones({1, 3}), kLinear), Error);
  Tensor constant = Tensor::ones({4, 3});
  try {
    gram(constant, kRbfMedian);
    FAIL("expected degenerate-bandwidth error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::degenerate);
  }
}

TEST_CASE("cka dissimilarity of a matrix with itself is zero") {
  Rng rng(2);
  Tensor m = random_tensor({8, 5}, rng);
  CHECK(std::abs(cka_dissimilarity(m, m, kLinear).item()) < 1e-10);
  CHECK(std::abs(cka_dissimilarity(m, m, kRbfMedian).item()) < 1e-10);
}

TEST_CASE("linear cka is invariant to orthogonal rotation") {
  Rng rng(3);
  Tensor m = random_tensor({7, 4}, rng);
  Tensor rotated = matmul(m, random_orthogonal(4, rng));
  CHECK(std::abs(cka_dissimilarity(m, rotated, kLinear).item()) < 1e-9);
}

TEST_CASE("cka matches the explicit-matrix oracle on a fixed 5x3 pair") {
  Rng rng(4);
  Tensor m = random_tensor({5, 3}, rng);
  Tensor y = random_tensor({5, 3}, rng);

  Tensor pm = gram(m, kLinear);
  Tensor py = gram(y, kLinear);
  double expect = oracle::cka_ref({pm.data().begin(), pm.data().end()},
                                  {py.data().begin(), py.data().end()}, 5);
  CHECK(std::abs(cka_dissimilarity(m, y, kLinear).item() - expect) < 1e-10);

  // rbf path with a fixed bandwidth, gram matrices built independently
  double sigma = 1.3;
  std::vector<double> km(25), ky(25);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double dm = 0.0, dy = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        dm += (m.at(i, k) - m.at(j, k)) * (m.at(i, k) - m.at(j, k));
        dy += (y.at(i, k) - y.at(j, k)) * (y.at(i, k) - y.at(j, k));
      }
      km[i * 5 + j] = i == j ? 1.0 : std::exp(-dm / (2 * sigma * sigma));
      ky[i * 5 + j] = i == j ? 1.0 : std::exp(-dy / (2 * sigma * sigma));
    }
  KernelSpec spec{KernelKind::rbf, 0.5, sigma};
  CHECK(std::abs(cka_dissimilarity(m, y, spec).item() - oracle::cka_ref(km, ky, 5)) < 1e-10);
}

TEST_CASE("cka value is symmetric and in [0,1]") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor m = random_tensor({6, 4}, rng);
    Tensor y = random_tensor({6, 4}, rng);
    double fwd = cka_dissimilarity(m, y, kLinear).item();
    double rev = cka_dissimilarity(y, m, kLinear).item();
    CHECK(std::abs(fwd - rev) < 1e-10);
    CHECK(fwd > -1e-9);
    CHECK(fwd < 1.0 + 1e-9);
  }
}

TEST_CASE("cka is invariant to isotropic scaling") {
  Rng rng(6);
  Tensor m = random_tensor({6, 4}, rng);
  Tensor y = random_tensor({6, 4}, rng);
  double base_lin = cka_dissimilarity(m, y, kLinear).item();
  double base_rbf = cka_dissimilarity(m, y, kRbfMedian).item();
  for (double alpha : {0.1, 10.0}) {
    Tensor scaled = mul(m, alpha);
    CHECK(std::abs(cka_dissimilarity(scaled, y, kLinear).item() - base_lin) < 1e-9);
    // median-rule bandwidth rescales with the data
    CHECK(std::abs(cka_dissimilarity(scaled, y, kRbfMedian).item() - base_rbf) < 1e-9);
  }
}

TEST_CASE("cka gradient flows to the student only and matches finite differences") {
  Rng rng(7);
  Tensor m = random_tensor({6, 4}, rng, true);
  Tensor y = random_tensor({6, 4}, rng, true);

  backward(cka_dissimilarity(m, y, kLinear));
  bool student_moved = false;
  for (double g : m.grad()) student_moved = student_moved || g != 0.0;
  CHECK(student_moved);
  for (double g : y.grad()) CHECK(g == 0.0);

  m.zero_grad();
  double err = oracle::max_grad_rel_err([&] { return cka_dissimilarity(m, y, kLinear); }, {m});
  CHECK(err < 1e-4);
  m.zero_grad();
  KernelSpec rbf_fixed{KernelKind::rbf, 0.5, 2.0};
  double err_rbf = oracle::max_grad_rel_err([&] { return cka_dissimilarity(m, y, rbf_fixed); }, {m});
  CHECK(err_rbf < 1e-4);
}

TEST_CASE("cka rejects constant features") {
  Tensor constant = Tensor::ones({5, 3});
  Rng rng(8);
  Tensor y = random_tensor({5, 3}, rng);
  try {
    cka_dissimilarity(constant, y, kLinear);
    FAIL("expected degenerate error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::degenerate);
  }
}

TEST_CASE("feature losses vanish at equality") {
  Rng rng(9);
  Tensor m = random_tensor({4, 3}, rng);
  CHECK(l2_feature_loss(m, m).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_feature_loss(m, m).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("orthogonal rows give cosine term 1") {
  Tensor m = Tensor::from_data({1, 2}, {1, 0});
  Tensor y = Tensor::from_data({1, 2}, {0, 1});
  CHECK(cosine_feature_loss(m, y).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("feature losses match hand-evaluated sums on a fixed 3x2 pair") {
  Tensor m = Tensor::from_data({3, 2}, {1, 2, -0.5, 1, 3, -2});
  Tensor y = Tensor::from_data({3, 2}, {0.5, 2, 1, 0, 2.5, -1});
  double l2_expect = 0.0, cos_expect = 0.0;
  for (int i = 0; i < 3; ++i) {
    double d0 = m.at(i, 0) - y.at(i, 0), d1 = m.at(i, 1) - y.at(i, 1);
    l2_expect += d0 * d0 + d1 * d1;
    double dot = m.at(i, 0) * y.at(i, 0) + m.at(i, 1) * y.at(i, 1);
    double nm = std::sqrt(m.at(i, 0) * m.at(i, 0) + m.at(i, 1) * m.at(i, 1)) + 1e-12;
    double ny = std::sqrt(y.at(i, 0) * y.at(i, 0) + y.at(i, 1) * y.at(i, 1)) + 1e-12;
    cos_expect += 1.0 - dot / (nm * ny);
  }
  l2_expect /= 3.0;
  cos_expect /= 3.0;
  CHECK(std::abs(l2_feature_loss(m, y).item() - l2_expect) < 1e-12);
  CHECK(std::abs(cosine_feature_loss(m, y).item() - cos_expect) < 1e-12);
}

TEST_CASE("cosine loss survives a zero-norm row via the epsilon guard") {
  Tensor m = Tensor::from_data({2, 2}, {0, 0, 1, 1});
  Tensor y = Tensor::from_data({2, 2}, {1, 0, 1, 1});
  double v = cosine_feature_loss(m, y).item();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(0.5).epsilon(1e-9));  // zero row contributes 1, equal row 0
}

TEST_CASE("feature-loss gradients match finite differences") {
  Rng rng(10);
  Tensor m = random_tensor({5, 3}, rng, true);
  Tensor y = random_tensor({5, 3}, rng);
  CHECK(oracle::max_grad_rel_err([&] { return l2_feature_loss(m, y); }, {m}) < 1e-4);
  m.zero_grad();
  CHECK(oracle::max_grad_rel_err([&] { return cosine_feature_loss(m, y); }, {m}) < 1e-4);
}

TEST_CASE("kl of identical logits is zero") {
  Rng rng(11);
  Tensor z = random_tensor({4, 5}, rng);
  CHECK(std::abs(kl_pred_loss(z, z).item()) < 1e-12);
}

TEST_CASE("kl stays finite under extreme logits") {
  Tensor teacher = Tensor::from_data({1, 2}, {0, 0});
  Tensor student = Tensor::from_data({1, 2}, {0, 1000});
  double v = kl_pred_loss(student, teacher).item();
  CHECK(std::isfinite(v));
  CHECK(v > 100.0);
}

TEST_CASE("kl matches the direct sum oracle") {
  Tensor teacher = Tensor::from_data({1, 2}, {1, 0});
  Tensor student = Tensor::from_data({1, 2}, {0, 1});
  double e = std::exp(1.0);
  double p0 = e / (1 + e), p1 = 1 / (1 + e);
  double q0 = 1 / (1 + e), q1 = e / (1 + e);
  double expect = p0 * std::log(p0 / q0) + p1 * std::log(p1 / q1);
  CHECK(std::abs(kl_pred_loss(student, teacher).item() - expect) < 1e-10);
}

TEST_CASE("kl is nonnegative and detaches the teacher") {
  Rng rng(12);
  Tensor teacher = random_tensor({6, 4}, rng, true);
  Tensor student = random_tensor({6, 4}, rng, true);
  Tensor loss = kl_pred_loss(student, teacher);
  CHECK(loss.item() >= 0.0);
  backward(loss);
  for (double g : teacher.grad()) CHECK(g == 0.0);
  CHECK(oracle::max_grad_rel_err([&] { return kl_pred_loss(student, teacher); }, {student}) < 1e-4);
}

TEST_CASE("cross entropy of uniform logits is log C") {
  Tensor logits = Tensor::zeros({3, 4});
  CHECK(std::abs(cross_entropy(logits, {0, 1, 2}).item() - std::log(4.0)) < 1e-6);
}

TEST_CASE("cross entropy vanishes at margin 50") {
  Tensor logits = Tensor::from_data({1, 3}, {50, 0, 0});
  CHECK(cross_entropy(logits, {0}).item() < 1e-20);
}

TEST_CASE("cross entropy matches a manual softmax oracle on fixed 2x3 logits") {
  Tensor logits = Tensor::from_data({2, 3}, {1, -0.5, 2, 0.3, 0.8, -1});
  std::vector<int> labels{2, 1};
  double expect = 0.0;
  for (int i = 0; i < 2; ++i) {
    double denom = 0.0;
    for (int j = 0; j < 3; ++j) denom += std::exp(logits.at(i, j));
    expect -= std::log(std::exp(logits.at(i, labels[i])) / denom);
  }
  expect /= 2.0;
  CHECK(std::abs(cross_entropy(logits, labels).item() - expect) < 1e-12);
}

TEST_CASE("cross entropy rejects out-of-range labels") {
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {0, 3}), Error);
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), {-1, 0}), Error);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(13);
  Tensor logits = random_tensor({4, 3}, rng, true);
  CHECK(oracle::max_grad_rel_err([&] { return cross_entropy(logits, {0, 2, 1, 0}); }, {logits}) <
        1e-4);
}
