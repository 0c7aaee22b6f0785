#include "unirep/losses.hpp"

#include <algorithm>
#include <cmath>

#include "unirep/common.hpp"

namespace unirep {

namespace {

constexpr double kNormEps = 1e-12;

Tensor centering_matrix(std::size_t n) {
  std::vector<double> h(n * n, -1.0 / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) h[i * n + i] += 1.0;
  return Tensor::from_data({n, n}, std::move(h));
}

// Squared pairwise distance matrix with an exactly-zero diagonal:
// (R + R^T - 2 X X^T) masked off the diagonal.
Tensor pairwise_sqdist(const Tensor& x) {
  std::size_t n = x.dim(0);
  Tensor s = matmul(x, transpose(x));
  Tensor r = reduce_sum(mul(x, x), 1);                       // [n]
  Tensor rcol = matmul(reshape(r, {n, 1}), Tensor::ones({1, n}));
  Tensor d = sub(add(rcol, transpose(rcol)), mul(s, 2.0));
  std::vector<double> mask(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 0.0;
  return mul(d, Tensor::from_data({n, n}, std::move(mask)));
}

double median_nonzero_distance(const Tensor& sqdist) {
  std::size_t n = sqdist.dim(0);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = sqdist.at(i, j);
      if (d2 > 0.0) dists.push_back(std::sqrt(d2));
    }
  if (dists.empty())
    fail(errc::degenerate, "rbf bandwidth: all pairwise distances are zero");
  std::sort(dists.begin(), dists.end());
  std::size_t m = dists.size();
  if (m % 2 == 1) return dists[m / 2];
  return 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
}

}  // namespace

Tensor sqrt_pos(const Tensor& u) { return exp(mul(log(add(u, 1e-300)), 0.5)); }

Tensor gram(const Tensor& x, const KernelSpec& spec) {
  if (x.rank() != 2) fail(errc::shape_mismatch, "gram: expects rank-2 features");
  if (x.dim(0) < 2) fail(errc::invalid_argument, "gram: needs at least 2 rows");
  if (spec.kind == KernelKind::linear) return matmul(x, transpose(x));

  Tensor d2 = pairwise_sqdist(x);
  double sigma;
  if (spec.sigma.has_value()) {
    sigma = *spec.sigma;
    if (!(sigma > 0.0)) fail(errc::invalid_argument, "gram: rbf sigma must be positive");
  } else {
    if (!(spec.bandwidth_fraction > 0.0))
      fail(errc::invalid_argument, "gram: bandwidth fraction must be positive");
    sigma = spec.bandwidth_fraction * median_nonzero_distance(d2);
  }
  return exp(mul(d2, -1.0 / (2.0 * sigma * sigma)));
}

Tensor cka_dissimilarity(const Tensor& student, const Tensor& target, const KernelSpec& spec) {
  if (student.rank() != 2 || target.rank() != 2)
    fail(errc::shape_mismatch, "cka: expects rank-2 feature matrices");
  if (student.dim(0) != target.dim(0))
    fail(errc::shape_mismatch, "cka: row counts differ " + shape_str(student.shape()) + " vs " +
                                   shape_str(target.shape()));
  std::size_t n = student.dim(0);
  if (n < 2) fail(errc::invalid_argument, "cka: needs at least 2 rows");

  Tensor p = gram(student, spec);
  Tensor t = gram(target.detach(), spec);
  Tensor h = centering_matrix(n);

  Tensor pc = matmul(matmul(h, p), h);
  Tensor tc = matmul(matmul(h, t), h);
  Tensor sxy = reduce_sum(mul(pc, t));
  Tensor sxx = reduce_sum(mul(pc, p));
  Tensor syy = reduce_sum(mul(tc, t));

  double scale = 0.0;
  for (double v : p.data()) scale += v * v;
  for (double v : t.data()) scale += v * v;
  double floor = 1e-20 * std::max(1.0, scale);
  if (sxx.item() <= floor || syy.item() <= floor)
    fail(errc::degenerate, "cka: centered kernel norm vanishes (constant features)");

  Tensor denom = sqrt_pos(mul(sxx, syy));
  return sub(1.0, div(sxy, denom));
}

Tensor l2_feature_loss(const Tensor& student, const Tensor& target) {
  if (student.shape() != target.shape())
    fail(errc::shape_mismatch, "l2 loss: shapes differ " + shape_str(student.shape()) + " vs " +
                                   shape_str(target.shape()));
  Tensor diff = sub(student, target.detach());
  return reduce_mean(reduce_sum(mul(diff, diff), 1));
}

Tensor cosine_feature_loss(const Tensor& student, const Tensor& target) {
  if (student.shape() != target.shape())
    fail(errc::shape_mismatch, "cosine loss: shapes differ " + shape_str(student.shape()) + " vs " +
                                   shape_str(target.shape()));
  Tensor y = target.detach();
  Tensor dots = reduce_sum(mul(student, y), 1);
  Tensor nm = add(sqrt_pos(reduce_sum(mul(student, student), 1)), kNormEps);
  Tensor ny = add(sqrt_pos(reduce_sum(mul(y, y), 1)), kNormEps);
  Tensor cos = div(dots, mul(nm, ny));
  return reduce_mean(sub(1.0, cos));
}

Tensor kl_pred_loss(const Tensor& student_logits, const Tensor& teacher_logits) {
  if (student_logits.shape() != teacher_logits.shape())
    fail(errc::shape_mismatch, "kl loss: shapes differ " + shape_str(student_logits.shape()) +
                                   " vs " + shape_str(teacher_logits.shape()));
  Tensor lt = log_softmax_rows(teacher_logits.detach());
  Tensor ls = log_softmax_rows(student_logits);
  Tensor terms = mul(exp(lt.detach()), sub(lt.detach(), ls));
  return reduce_mean(reduce_sum(terms, 1));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) fail(errc::shape_mismatch, "cross_entropy: expects rank-2 logits");
  std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n)
    fail(errc::shape_mismatch, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                   std::to_string(n) + " rows");
  std::vector<double> onehot(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      fail(errc::validation, "cross_entropy: label " + std::to_string(y) + " out of range [0," +
                                 std::to_string(c) + ")");
    onehot[i * c + static_cast<std::size_t>(y)] = 1.0;
  }
  Tensor picked = reduce_sum(mul(log_softmax_rows(logits), Tensor::from_data({n, c}, std::move(onehot))), 1);
  return neg(reduce_mean(picked));
}

}  // namespace unirep
