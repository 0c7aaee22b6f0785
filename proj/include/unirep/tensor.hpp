#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace unirep {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One node of the dynamic tape. The graph is a DAG reachable from the loss
// through `inputs`; backward() derives a topological order and visits every
// node exactly once. Gradients accumulate additively into `grad`; leaf
// gradients persist across backward calls, interior buffers are released
// once propagated.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool leaf = true;
  bool requires_grad = false;  // true iff gradient flows through this node
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backprop;

  std::size_t numel() const { return value.size(); }
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats with optional gradient tracking.
// Value semantics over a shared node: copies alias the same storage. Values
// are immutable after construction except through raw_data() (optimizer
// steps). All operations are deterministic and single-threaded.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;

  std::span<const double> data() const;
  // Mutable access to the value buffer; for optimizer updates and test
  // perturbations only.
  std::span<double> raw_data();

  bool requires_grad() const;
  bool is_leaf() const;
  // Gradient buffer; zeros if backward never touched this tensor. Empty span
  // when requires_grad is false.
  std::span<const double> grad() const;
  void zero_grad();

  // Same values, detached from the graph (no gradient flows).
  Tensor detach() const;
  // Deep copy as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;

  friend Tensor wrap_node(std::shared_ptr<detail::TensorNode> node);
};

// --- operations ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, double s);
Tensor sub(double s, const Tensor& a);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, double s);
Tensor div(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, double s);
Tensor div(double s, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor neg(const Tensor& a);

Tensor reduce_sum(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);
Tensor reduce_mean(const Tensor& a, std::optional<std::size_t> axis = std::nullopt);

// Row-wise softmax / log-softmax over [n x C], max-subtracted for stability.
Tensor softmax_rows(const Tensor& z);
Tensor log_softmax_rows(const Tensor& z);

Tensor reshape(const Tensor& a, Shape shape);

// Value-only row gather (no gradient path); for slicing cached features.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// Accumulates d loss / d tensor into every requires_grad tensor reachable
// from the scalar loss. A NaN gradient anywhere is a hard error.
void backward(const Tensor& loss);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace unirep
