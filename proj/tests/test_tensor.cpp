#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "support/oracles.hpp"
#include "unirep/common.hpp"
#include "unirep/rng.hpp"
#include "unirep/tensor.hpp"

using namespace unirep;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false, double scale = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = scale * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and hand values") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {3, -1, 2, 5});
  Tensor prod = matmul(eye, b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(prod.data()[i] == b.data()[i]);

  Tensor row = Tensor::from_data({1, 2}, {1, 2});
  Tensor col = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul shape error names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.code() == errc::shape_mismatch);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(101);
  Tensor a = random_tensor({3, 4}, rng, true);
  Tensor b = random_tensor({4, 2}, rng, true);
  double err = oracle::max_grad_rel_err([&] { return reduce_sum(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise basics") {
  Tensor x = Tensor::from_data({3}, {-1, 0, 2});
  Tensor r = relu(x);
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 0.0);
  CHECK(r.at(2) == 2.0);

  Tensor y = Tensor::from_data({2}, {0.5, 3.0});
  Tensor round_trip = exp(log(y));
  CHECK(std::abs(round_trip.at(0) - 0.5) < 1e-12);
  CHECK(std::abs(round_trip.at(1) - 3.0) < 1e-12);

  Tensor scaled = mul(add(x, 1.0), 2.0);
  CHECK(scaled.at(0) == 0.0);
  CHECK(scaled.at(2) == 6.0);
}

TEST_CASE("elementwise error paths") {
  CHECK_THROWS_AS(log(Tensor::from_data({1}, {-1.0})), Error);
  CHECK_THROWS_AS(div(Tensor::ones({2}), Tensor::zeros({2})), Error);
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), Error);
}

TEST_CASE("gradient of sum(x*x) is 2x") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  double err = oracle::max_grad_rel_err([&] { return reduce_sum(mul(x, x)); }, {x});
  CHECK(err < 1e-6);
  x.zero_grad();
  backward(reduce_sum(mul(x, x)));
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(x.grad()[2] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("reductions") {
  CHECK(reduce_mean(Tensor::from_data({3}, {2, 4, 6})).item() == doctest::Approx(4.0));
  Tensor ones22 = Tensor::ones({2, 2});
  Tensor by_rows = reduce_sum(ones22, 0);
  CHECK(by_rows.shape() == Shape{2});
  CHECK(by_rows.at(0) == 2.0);
  CHECK(by_rows.at(1) == 2.0);
  CHECK_THROWS_AS(reduce_sum(ones22, 2), Error);

  Tensor x = Tensor::from_data({4}, {1, -2, 0.5, 3}, true);
  double err = oracle::max_grad_rel_err([&] { return reduce_mean(x); }, {x});
  CHECK(err < 1e-6);
  x.zero_grad();
  backward(reduce_mean(x));
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax rows") {
  Tensor flat = softmax_rows(Tensor::from_data({1, 3}, {0, 0, 0}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(flat.at(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big = softmax_rows(Tensor::from_data({1, 2}, {1000, 1000}));
  CHECK(big.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));

  // direct evaluation oracle for [1, 2]
  double e1 = std::exp(1.0), e2 = std::exp(2.0);
  Tensor two = softmax_rows(Tensor::from_data({1, 2}, {1, 2}));
  CHECK(std::abs(two.at(0, 0) - e1 / (e1 + e2)) < 1e-5);
  CHECK(std::abs(two.at(0, 1) - e2 / (e1 + e2)) < 1e-5);
  CHECK(two.at(0, 0) == doctest::Approx(0.26894).epsilon(1e-4));
  CHECK(two.at(0, 1) == doctest::Approx(0.73106).epsilon(1e-4));

  // row sums are 1 within 1e-12
  Rng rng(7);
  Tensor z = random_tensor({5, 4}, rng, false, 3.0);
  Tensor s = softmax_rows(z);
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sum += s.at(i, j);
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(softmax_rows(Tensor::from_data({1, 2}, {std::nan(""), 0.0})), Error);
}

TEST_CASE("softmax and log_softmax gradients match finite differences") {
  Rng rng(19);
  Tensor z = random_tensor({3, 4}, rng, true);
  Tensor w = random_tensor({3, 4}, rng);  // fixed mixing weights
  double err = oracle::max_grad_rel_err([&] { return reduce_sum(mul(softmax_rows(z), w)); }, {z});
  CHECK(err < 1e-4);
  double err_ls =
      oracle::max_grad_rel_err([&] { return reduce_sum(mul(log_softmax_rows(z), w)); }, {z});
  CHECK(err_ls < 1e-4);
}

TEST_CASE("constant loss leaves zero gradient") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor c = Tensor::scalar(5.0);
  backward(c);
  for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("grad of sum(W x) is the column sums of W") {
  Tensor w = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor x = Tensor::from_data({3, 1}, {0.5, -1, 2}, true);
  backward(reduce_sum(matmul(w, x)));
  CHECK(x.grad()[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(x.grad()[2] == doctest::Approx(9.0).epsilon(1e-12));
}

TEST_CASE("non-scalar loss is rejected") {
  Tensor x = Tensor::ones({2}, true);
  CHECK_THROWS_AS(backward(mul(x, 2.0)), Error);
}

TEST_CASE("two-layer MLP cross-entropy gradient vs finite differences") {
  Rng rng(23);
  std::size_t n = 5, p = 4, h = 6, c = 3;
  Tensor x = random_tensor({n, p}, rng);
  Tensor w1 = random_tensor({p, h}, rng, true, 0.7);
  Tensor b1 = random_tensor({1, h}, rng, true, 0.1);
  Tensor w2 = random_tensor({h, c}, rng, true, 0.7);
  Tensor b2 = random_tensor({1, c}, rng, true, 0.1);
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) onehot[i * c + i % c] = 1.0;
  Tensor targets = Tensor::from_data({n, c}, std::move(onehot));
  Tensor ones_col = Tensor::ones({n, 1});

  auto loss_fn = [&] {
    Tensor h1 = relu(add(matmul(x, w1), matmul(ones_col, b1)));
    Tensor logits = add(matmul(h1, w2), matmul(ones_col, b2));
    return neg(reduce_mean(reduce_sum(mul(log_softmax_rows(logits), targets), 1)));
  };
  double err = oracle::max_grad_rel_err(loss_fn, {w1, b1, w2, b2});
  CHECK(err < 1e-4);
}

TEST_CASE("a tensor used on two paths accumulates both gradients") {
  Tensor x = Tensor::from_data({3}, {1.5, -2, 0.25}, true);
  Tensor a = Tensor::from_data({3}, {2, 3, 4});
  Tensor b = Tensor::from_data({3}, {-1, 0.5, 2});

  backward(reduce_sum(add(mul(x, a), mul(x, b))));
  std::vector<double> two_path(x.grad().begin(), x.grad().end());

  Tensor x2 = x.clone(true);
  backward(reduce_sum(mul(x2, add(a, b))));
  std::vector<double> one_path(x2.grad().begin(), x2.grad().end());

  for (std::size_t i = 0; i < 3; ++i) CHECK(two_path[i] == doctest::Approx(one_path[i]).epsilon(1e-14));
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  backward(reduce_sum(mul(x, 3.0)));
  backward(reduce_sum(mul(x, 3.0)));
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("requires_grad=false tensors never accumulate gradient") {
  Tensor x = Tensor::from_data({2}, {1, 2}, false);
  Tensor y = Tensor::from_data({2}, {3, 4}, true);
  backward(reduce_sum(mul(x, y)));
  CHECK(x.grad().empty());
  CHECK_FALSE(x.requires_grad());
  CHECK(y.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("operations are bit-deterministic") {
  Rng rng(31);
  Tensor a = random_tensor({4, 4}, rng);
  Tensor b = random_tensor({4, 4}, rng);
  Tensor p1 = matmul(a, b), p2 = matmul(a, b);
  CHECK(std::memcmp(p1.data().data(), p2.data().data(), 16 * sizeof(double)) == 0);
  Tensor s1 = softmax_rows(a), s2 = softmax_rows(a);
  CHECK(std::memcmp(s1.data().data(), s2.data().data(), 16 * sizeof(double)) == 0);
}

TEST_CASE("NaN in backward is a hard error") {
  Tensor x = Tensor::from_data({1}, {1e-310}, true);
  // 1/x overflows to inf; inf * 0 in the next gradient step yields NaN.
  Tensor loss = reduce_sum(mul(div(1.0, x), 0.0));
  CHECK_THROWS_AS(backward(loss), Error);
}

TEST_CASE("reshape keeps data and routes gradient") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor r = reshape(x, {3, 2});
  CHECK(r.at(2, 1) == 6.0);
  CHECK_THROWS_AS(reshape(x, {4, 2}), Error);
  backward(reduce_sum(mul(r, r)));
  CHECK(x.grad()[5] == doctest::Approx(12.0));
}

TEST_CASE("gather_rows copies values without a gradient path") {
  Tensor x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  std::vector<std::size_t> rows{2, 0};
  Tensor g = gather_rows(x, rows);
  CHECK(g.at(0, 0) == 5.0);
  CHECK(g.at(1, 1) == 2.0);
  CHECK_FALSE(g.requires_grad());
}
