#pragma once

// Define-by-run reverse-mode automatic differentiation over dense
// double-precision tensors of rank 0, 1 or 2.
//
// Every op records its inputs and a backward closure when any input requires
// a gradient. backward() walks the recorded graph once in reverse topological
// order and then frees it. Ops created while a PrecisionScope selects
// Precision::EmulatedSingle round their forward results and their backward
// contributions to the nearest binary32 value.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mlctl::ad {

enum class Precision { Double, EmulatedSingle };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& name);

// Rounds to the nearest binary32 value and widens back.
inline double round_to_single(double x) { return static_cast<double>(static_cast<float>(x)); }

Precision current_precision();

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool backward_done = false;
  Precision precision = Precision::Double;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void accumulate(std::size_t i, double g);
  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Mutable access is meant for leaves (parameters, inputs) only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Zeros when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  void zero_grad();

  // Copy of the values as a fresh leaf with no history.
  Tensor detach() const;

  detail::Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& shared_node() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor gelu(const Tensor& a);

// (r, c) + (c): the bias row is repeated along the leading dimension.
Tensor add_row(const Tensor& m, const Tensor& row);

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor logsumexp(const Tensor& v);

// (r, c) -> (c): average of the rows.
Tensor mean_rows(const Tensor& m);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor softmax_rows(const Tensor& m);
// Row-wise normalisation with learned gain and bias of shape (c).
Tensor layer_norm(const Tensor& m, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

// Concatenation. Rank-1 inputs (and scalars) join along axis 0; rank-2 inputs
// join along `axis`.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis = 0);
Tensor slice(const Tensor& v, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end);
Tensor row(const Tensor& m, std::size_t r);
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

// Mean cross-entropy of row-wise softmax(logits) against target classes.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Identity forward, zero partial derivatives.
Tensor stop_gradient(const Tensor& a);

// Forward rounding to binary32; backward passes gradients through.
Tensor to_single(const Tensor& a);

// Runs reverse-mode accumulation from a scalar loss into every leaf that
// requires a gradient, then frees the graph. A second call on the same loss
// throws ContractError.
void backward(const Tensor& loss);

}  // namespace mlctl::ad
