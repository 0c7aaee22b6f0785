#pragma once

#include <optional>
#include <vector>

#include "unirep/tensor.hpp"

namespace unirep {

enum class KernelKind { linear, rbf };

// RBF bandwidth: sigma when set, otherwise bandwidth_fraction times the
// median nonzero pairwise distance of the minibatch, held constant w.r.t.
// gradients.
struct KernelSpec {
  KernelKind kind = KernelKind::linear;
  double bandwidth_fraction = 0.5;
  std::optional<double> sigma;
};

// Kernel (Gram) matrix of row vectors. linear: X X^T. rbf: exp(-|xi-xj|^2 /
// (2 sigma^2)) with an exactly-unit diagonal.
Tensor gram(const Tensor& x, const KernelSpec& spec);

// 1 - tr(PHTH)/sqrt(tr(PHPH) tr(THTH)) over centered minibatch kernels.
// Gradient flows into `student` only; `target` is treated as constant.
Tensor cka_dissimilarity(const Tensor& student, const Tensor& target, const KernelSpec& spec);

// Mean over rows of squared Euclidean distance / (1 - cosine similarity).
// The target argument is treated as constant.
Tensor l2_feature_loss(const Tensor& student, const Tensor& target);
Tensor cosine_feature_loss(const Tensor& student, const Tensor& target);

// Mean over rows of KL(softmax(teacher) || softmax(student)); the teacher
// side is treated as constant.
Tensor kl_pred_loss(const Tensor& student_logits, const Tensor& teacher_logits);

// Mean negative log softmax probability of the true class.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// exp(0.5 log(u + tiny)): sqrt for strictly positive arguments, composed from
// the primitive op set.
Tensor sqrt_pos(const Tensor& u);

}  // namespace unirep
