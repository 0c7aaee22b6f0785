#include "unirep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "unirep/common.hpp"

namespace unirep {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace detail {

std::vector<double>& TensorNode::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

Tensor wrap_node(NodePtr node) { return Tensor(std::move(node)); }

namespace {

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    fail(errc::shape_mismatch, "tensor data length " + std::to_string(data.size()) +
                                   " does not match shape " + shape_str(shape));
  for (std::size_t d : shape)
    if (d == 0) fail(errc::invalid_argument, "zero dimension in shape " + shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->leaf = true;
  node->requires_grad = requires_grad;
  return node;
}

NodePtr make_op(const char* op, Shape shape, std::vector<double> value,
                std::vector<NodePtr> inputs,
                std::function<void(TensorNode&)> backprop) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->leaf = false;
  node->op = op;
  bool track = false;
  for (const auto& in : inputs) track = track || in->requires_grad;
  node->requires_grad = track;
  if (track) {
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
  }
  return node;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(errc::shape_mismatch, std::string(op) + ": shapes differ " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
}

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) fail(errc::invalid_argument, std::string(op) + ": undefined tensor");
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
           std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      double av = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

// --- Tensor basics --------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), 0.0);
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), v);
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::ones(Shape shape, bool requires_grad) { return full(std::move(shape), 1.0, requires_grad); }

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_leaf(Shape{}, std::vector<double>{v}, requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

const Shape& Tensor::shape() const {
  if (!node_) fail(errc::invalid_argument, "shape(): undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const {
  if (!node_) return 0;
  return node_->numel();
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) fail(errc::invalid_axis, "dim(): axis out of range");
  return shape()[axis];
}

std::span<const double> Tensor::data() const {
  if (!node_) fail(errc::invalid_argument, "data(): undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

std::span<double> Tensor::raw_data() {
  if (!node_) fail(errc::invalid_argument, "raw_data(): undefined tensor");
  return {node_->value.data(), node_->value.size()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

std::span<const double> Tensor::grad() const {
  if (!node_) fail(errc::invalid_argument, "grad(): undefined tensor");
  if (!node_->requires_grad) return {};
  auto& buf = node_->grad_buffer();
  return {buf.data(), buf.size()};
}

void Tensor::zero_grad() {
  if (!node_) return;
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  check_defined(*this, "detach");
  return Tensor(make_leaf(node_->shape, node_->value, false));
}

Tensor Tensor::clone(bool requires_grad) const {
  check_defined(*this, "clone");
  return Tensor(make_leaf(node_->shape, node_->value, requires_grad));
}

double Tensor::item() const {
  if (numel() != 1) fail(errc::invalid_argument, "item(): tensor is not scalar, shape " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) fail(errc::invalid_argument, "at(): index out of range");
  return node_->value[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2) fail(errc::invalid_argument, "at(i,j): tensor is not rank 2");
  if (i >= shape()[0] || j >= shape()[1]) fail(errc::invalid_argument, "at(i,j): index out of range");
  return node_->value[i * shape()[1] + j];
}

// --- matmul / transpose ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2)
    fail(errc::shape_mismatch, "matmul: expects rank-2 operands, got " + shape_str(a.shape()) +
                                   " and " + shape_str(b.shape()));
  std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    fail(errc::shape_mismatch,
         "matmul: inner dimensions disagree " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  mm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  NodePtr an = a.node(), bn = b.node();
  return wrap_node(make_op(
      "matmul", Shape{m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](TensorNode& node) {
        const double* g = node.grad.data();
        if (an->requires_grad)
          mm_nt(g, bn->value.data(), an->grad_buffer().data(), m, n, k);
        if (bn->requires_grad)
          mm_tn(an->value.data(), g, bn->grad_buffer().data(), k, m, n);
      }));
}

Tensor transpose(const Tensor& a) {
  check_defined(a, "transpose");
  if (a.rank() != 2) fail(errc::shape_mismatch, "transpose: expects rank-2, got " + shape_str(a.shape()));
  std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const double* src = a.data().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  NodePtr an = a.node();
  return wrap_node(make_op("transpose", Shape{n, m}, std::move(out), {an}, [an, m, n](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    const double* g = node.grad.data();
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < m; ++i) ga[i * n + j] += g[j * m + i];
  }));
}

// --- elementwise ------------------------------------------------------------

namespace {

enum class Bin { add, sub, mul, div };

Tensor binary_tt(Bin kind, const char* name, const Tensor& a, const Tensor& b) {
  check_defined(a, name);
  check_defined(b, name);
  check_same_shape(a, b, name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  switch (kind) {
    case Bin::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case Bin::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case Bin::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case Bin::div:
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (bv[i] == 0.0) fail(errc::domain_error, "div: division by zero");
        out[i] = av[i] / bv[i];
      }
      break;
  }
  NodePtr an = a.node(), bn = b.node();
  return wrap_node(make_op(name, a.shape(), std::move(out), {an, bn}, [kind, an, bn](TensorNode& node) {
    const auto& g = node.grad;
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      switch (kind) {
        case Bin::add:
        case Bin::sub:
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
          break;
        case Bin::mul:
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->value[i];
          break;
        case Bin::div:
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bn->value[i];
          break;
      }
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      switch (kind) {
        case Bin::add:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
          break;
        case Bin::sub:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
          break;
        case Bin::mul:
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->value[i];
          break;
        case Bin::div:
          for (std::size_t i = 0; i < g.size(); ++i)
            gb[i] -= g[i] * an->value[i] / (bn->value[i] * bn->value[i]);
          break;
      }
    }
  }));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_tt(Bin::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_tt(Bin::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_tt(Bin::mul, "mul", a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_tt(Bin::div, "div", a, b); }

Tensor add(const Tensor& a, double s) {
  check_defined(a, "add");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  NodePtr an = a.node();
  return wrap_node(make_op("add_s", a.shape(), std::move(out), {an}, [an](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
  }));
}

Tensor sub(const Tensor& a, double s) { return add(a, -s); }

Tensor sub(double s, const Tensor& a) {
  check_defined(a, "sub");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s - av[i];
  NodePtr an = a.node();
  return wrap_node(make_op("sub_s", a.shape(), std::move(out), {an}, [an](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] -= node.grad[i];
  }));
}

Tensor mul(const Tensor& a, double s) {
  check_defined(a, "mul");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  NodePtr an = a.node();
  return wrap_node(make_op("mul_s", a.shape(), std::move(out), {an}, [an, s](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * s;
  }));
}

Tensor div(const Tensor& a, double s) {
  if (s == 0.0) fail(errc::domain_error, "div: division by zero scalar");
  return mul(a, 1.0 / s);
}

Tensor div(double s, const Tensor& a) {
  check_defined(a, "div");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (av[i] == 0.0) fail(errc::domain_error, "div: division by zero");
    out[i] = s / av[i];
  }
  NodePtr an = a.node();
  return wrap_node(make_op("div_s", a.shape(), std::move(out), {an}, [an, s](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      ga[i] -= node.grad[i] * s / (an->value[i] * an->value[i]);
  }));
}

Tensor relu(const Tensor& a) {
  check_defined(a, "relu");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  NodePtr an = a.node();
  return wrap_node(make_op("relu", a.shape(), std::move(out), {an}, [an](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i)
      if (an->value[i] > 0.0) ga[i] += node.grad[i];
  }));
}

Tensor exp(const Tensor& a) {
  check_defined(a, "exp");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  NodePtr an = a.node();
  return wrap_node(make_op("exp", a.shape(), std::move(out), {an}, [an](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] * node.value[i];
  }));
}

Tensor log(const Tensor& a) {
  check_defined(a, "log");
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(av[i] > 0.0))
      fail(errc::domain_error, "log of non-positive value " + std::to_string(av[i]));
    out[i] = std::log(av[i]);
  }
  NodePtr an = a.node();
  return wrap_node(make_op("log", a.shape(), std::move(out), {an}, [an](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i] / an->value[i];
  }));
}

Tensor neg(const Tensor& a) { return sub(0.0, a); }

// --- reductions --------------------------------------------------------------

Tensor reduce_sum(const Tensor& a, std::optional<std::size_t> axis) {
  check_defined(a, "reduce_sum");
  if (!axis.has_value()) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    NodePtr an = a.node();
    return wrap_node(make_op("sum", Shape{}, std::vector<double>{s}, {an}, [an](TensorNode& node) {
      if (!an->requires_grad) return;
      auto& ga = an->grad_buffer();
      double g = node.grad[0];
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    }));
  }
  std::size_t ax = *axis;
  if (ax >= a.rank()) fail(errc::invalid_axis, "reduce_sum: axis " + std::to_string(ax) +
                                                   " out of range for shape " + shape_str(a.shape()));
  if (a.rank() == 1) return reduce_sum(a);
  if (a.rank() != 2) fail(errc::invalid_axis, "reduce_sum: axis reduction supports rank <= 2");
  std::size_t m = a.dim(0), n = a.dim(1);
  const double* src = a.data().data();
  NodePtr an = a.node();
  if (ax == 0) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j] += src[i * n + j];
    return wrap_node(make_op("sum0", Shape{n}, std::move(out), {an}, [an, m, n](TensorNode& node) {
      if (!an->requires_grad) return;
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += node.grad[j];
    }));
  }
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += src[i * n + j];
  return wrap_node(make_op("sum1", Shape{m}, std::move(out), {an}, [an, m, n](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += node.grad[i];
  }));
}

Tensor reduce_mean(const Tensor& a, std::optional<std::size_t> axis) {
  check_defined(a, "reduce_mean");
  std::size_t count;
  if (!axis.has_value()) {
    count = a.numel();
  } else {
    std::size_t ax = *axis;
    if (ax >= a.rank()) fail(errc::invalid_axis, "reduce_mean: axis out of range");
    count = a.dim(ax);
  }
  return div(reduce_sum(a, axis), static_cast<double>(count));
}

// --- softmax ------------------------------------------------------------------

namespace {

void check_rows_input(const Tensor& z, const char* op) {
  check_defined(z, op);
  if (z.rank() != 2) fail(errc::shape_mismatch, std::string(op) + ": expects rank-2 logits");
  for (double v : z.data())
    if (!std::isfinite(v)) fail(errc::numeric, std::string(op) + ": non-finite input");
}

}  // namespace

Tensor softmax_rows(const Tensor& z) {
  check_rows_input(z, "softmax_rows");
  std::size_t n = z.dim(0), c = z.dim(1);
  const double* src = z.data().data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = src + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      denom += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= denom;
  }
  NodePtr zn = z.node();
  return wrap_node(make_op("softmax", z.shape(), std::move(out), {zn}, [zn, n, c](TensorNode& node) {
    if (!zn->requires_grad) return;
    auto& gz = zn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const double* s = node.value.data() + i * c;
      const double* g = node.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * s[j];
      for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += s[j] * (g[j] - dot);
    }
  }));
}

Tensor log_softmax_rows(const Tensor& z) {
  check_rows_input(z, "log_softmax_rows");
  std::size_t n = z.dim(0), c = z.dim(1);
  const double* src = z.data().data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = src + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
    double lse = mx + std::log(denom);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  NodePtr zn = z.node();
  return wrap_node(make_op("log_softmax", z.shape(), std::move(out), {zn}, [zn, n, c](TensorNode& node) {
    if (!zn->requires_grad) return;
    auto& gz = zn->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      const double* ls = node.value.data() + i * c;
      const double* g = node.grad.data() + i * c;
      double gsum = 0.0;
      for (std::size_t j = 0; j < c; ++j) gsum += g[j];
      for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += g[j] - std::exp(ls[j]) * gsum;
    }
  }));
}

// --- reshape / gather ----------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  check_defined(a, "reshape");
  if (shape_numel(shape) != a.numel())
    fail(errc::shape_mismatch, "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                                   shape_str(shape));
  NodePtr an = a.node();
  std::vector<double> out(a.data().begin(), a.data().end());
  return wrap_node(make_op("reshape", std::move(shape), std::move(out), {an}, [an](TensorNode& node) {
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
  }));
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  check_defined(a, "gather_rows");
  if (a.rank() != 2) fail(errc::shape_mismatch, "gather_rows: expects rank-2");
  std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out;
  out.reserve(rows.size() * d);
  const double* src = a.data().data();
  for (std::size_t r : rows) {
    if (r >= n) fail(errc::invalid_argument, "gather_rows: row index out of range");
    out.insert(out.end(), src + r * d, src + (r + 1) * d);
  }
  return Tensor::from_data(Shape{rows.size(), d}, std::move(out), false);
}

// --- backward --------------------------------------------------------------------

void backward(const Tensor& loss) {
  check_defined(loss, "backward");
  if (loss.numel() != 1)
    fail(errc::invalid_argument, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  NodePtr root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS; `order` ends topologically sorted (inputs first).
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      TensorNode* in = node->inputs[next].get();
      ++next;
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->grad.empty()) node->grad_buffer();
    for (double g : node->grad)
      if (std::isnan(g))
        fail(errc::numeric, std::string("backward: NaN gradient at op '") + node->op + "'");
    if (node->backprop) node->backprop(*node);
    // Interior buffers are consumed by propagation; leaves keep accumulating.
    if (!node->leaf) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace unirep
