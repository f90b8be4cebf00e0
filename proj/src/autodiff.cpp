#include "mlctl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "mlctl/error.hpp"
#include "mlctl/log.hpp"

namespace mlctl::ad {

using detail::Node;

namespace {

thread_local Precision g_precision = Precision::Double;

inline double rnd(Precision p, double x) {
  return p == Precision::EmulatedSingle ? round_to_single(x) : x;
}

std::size_t product(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ContractError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw ContractError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_string(a.shape()));
  }
}

// Builds the result node: rounds values in emulated-single mode and links
// inputs only when a gradient can flow.
std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value,
                                std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->precision = g_precision;
  if (node->precision == Precision::EmulatedSingle) {
    for (auto& v : value) v = round_to_single(v);
  }
  node->value = std::move(value);
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor* t : inputs) node->inputs.push_back(t->shared_node());
  }
  return node;
}

std::shared_ptr<Node> make_node_list(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->precision = g_precision;
  if (node->precision == Precision::EmulatedSingle) {
    for (auto& v : value) v = round_to_single(v);
  }
  node->value = std::move(value);
  for (const auto& t : inputs) {
    if (t.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const auto& t : inputs) node->inputs.push_back(t.shared_node());
  }
  return node;
}

template <typename Fn>
Tensor finish(std::shared_ptr<Node> node, Fn&& fn) {
  if (node->requires_grad) node->backward = std::forward<Fn>(fn);
  return Tensor(std::move(node));
}

// Elementwise unary op: forward f(x), backward g * df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  auto node = make_node(a.shape(), std::move(out), {&a});
  return finish(node, [df](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      x.accumulate(i, rnd(self.precision, self.grad[i] * df(x.value[i], self.value[i])));
    }
  });
}

}  // namespace

std::string to_string(Precision p) {
  return p == Precision::Double ? "double" : "emulated-single";
}

Precision precision_from_string(const std::string& name) {
  if (name == "double") return Precision::Double;
  if (name == "emulated-single" || name == "single") return Precision::EmulatedSingle;
  throw ContractError("unknown precision mode '" + name + "' (expected double or emulated-single)");
}

Precision current_precision() { return g_precision; }

PrecisionScope::PrecisionScope(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = saved_; }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

void Node::accumulate(std::size_t i, double g) {
  ensure_grad();
  grad[i] = rnd(precision, grad[i] + g);
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = product(shape);
  return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (product(shape) != values.size()) {
    throw ContractError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                        shape_string(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return from(std::move(s), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  require_rank("rows", *this, 2);
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank("cols", *this, 2);
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor of shape " + shape_string(shape()) + " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return finish(make_node(a.shape(), std::move(out), {&a, &b}), [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in->accumulate(i, self.grad[i]);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return finish(make_node(a.shape(), std::move(out), {&a, &b}), [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.requires_grad) x.accumulate(i, self.grad[i]);
      if (y.requires_grad) y.accumulate(i, -self.grad[i]);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return finish(make_node(a.shape(), std::move(out), {&a, &b}), [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.requires_grad) x.accumulate(i, rnd(self.precision, self.grad[i] * y.value[i]));
      if (y.requires_grad) y.accumulate(i, rnd(self.precision, self.grad[i] * x.value[i]));
    }
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / y[i];
  return finish(make_node(a.shape(), std::move(out), {&a, &b}), [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const auto p = self.precision;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (x.requires_grad) x.accumulate(i, rnd(p, self.grad[i] / y.value[i]));
      // d(x/y)/dy = -(x/y)/y, evaluated from the forward result.
      if (y.requires_grad) y.accumulate(i, rnd(p, -rnd(p, self.grad[i] * self.value[i]) / y.value[i]));
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x); });
}

Tensor add_row(const Tensor& m, const Tensor& rowv) {
  require_rank("add_row", m, 2);
  require_rank("add_row", rowv, 1);
  const std::size_t r = m.rows();
  const std::size_t c = m.cols();
  if (rowv.numel() != c) shape_fail("add_row", m.shape(), rowv.shape());
  std::vector<double> out(m.data().begin(), m.data().end());
  auto b = rowv.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return finish(make_node(m.shape(), std::move(out), {&m, &rowv}), [r, c](Node& self) {
    Node& x = *self.inputs[0];
    Node& b = *self.inputs[1];
    if (x.requires_grad)
      for (std::size_t i = 0; i < r * c; ++i) x.accumulate(i, self.grad[i]);
    if (b.requires_grad) {
      for (std::size_t j = 0; j < c; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < r; ++i) s += self.grad[i * c + j];
        b.accumulate(j, rnd(self.precision, s));
      }
    }
  });
}

// ---- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s = rnd(g_precision, s + v);
  return finish(make_node({}, {s}, {&a}), [](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < x.value.size(); ++i) x.accumulate(i, self.grad[0]);
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return finish(make_node({}, {s / n}, {&a}), [n](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    const double g = rnd(self.precision, self.grad[0] / n);
    for (std::size_t i = 0; i < x.value.size(); ++i) x.accumulate(i, g);
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same("dot", a, b);
  double s = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return finish(make_node({}, {s}, {&a, &b}), [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    const double g = self.grad[0];
    for (std::size_t i = 0; i < x.value.size(); ++i) {
      if (x.requires_grad) x.accumulate(i, rnd(self.precision, g * y.value[i]));
      if (y.requires_grad) y.accumulate(i, rnd(self.precision, g * x.value[i]));
    }
  });
}

Tensor logsumexp(const Tensor& v) {
  if (v.numel() == 0) throw ContractError("logsumexp: empty input");
  auto x = v.data();
  const double m = *std::max_element(x.begin(), x.end());
  double s = 0.0;
  for (double xi : x) s += std::exp(xi - m);
  return finish(make_node({}, {m + std::log(s)}, {&v}), [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < in.value.size(); ++i) {
      in.accumulate(i, rnd(self.precision, self.grad[0] * std::exp(in.value[i] - self.value[0])));
    }
  });
}

Tensor mean_rows(const Tensor& m) {
  require_rank("mean_rows", m, 2);
  const std::size_t r = m.rows();
  const std::size_t c = m.cols();
  if (r == 0) throw ContractError("mean_rows: no rows");
  std::vector<double> out(c, 0.0);
  auto x = m.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  for (auto& o : out) o /= static_cast<double>(r);
  return finish(make_node({c}, std::move(out), {&m}), [r, c](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        x.accumulate(i * c + j, rnd(self.precision, self.grad[j] / static_cast<double>(r)));
  });
}

// ---- matrix ops ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  if (b.rows() != k) shape_fail("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n, 0.0);
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* yrow = y.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
    }
  }
  return finish(make_node({m, n}, std::move(out), {&a, &b}), [m, k, n](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    const auto& G = self.grad;
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = G.data() + i * n;
          const double* brow = B.value.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          A.accumulate(i * k + p, rnd(self.precision, s));
        }
      }
    }
    if (B.requires_grad) {
      std::vector<double> acc(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.value[i * k + p];
          double* arow = acc.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) arow[j] += av * grow[j];
        }
      }
      for (std::size_t i = 0; i < k * n; ++i) B.accumulate(i, rnd(self.precision, acc[i]));
    }
  });
}

Tensor transpose(const Tensor& mat) {
  require_rank("transpose", mat, 2);
  const std::size_t r = mat.rows();
  const std::size_t c = mat.cols();
  std::vector<double> out(r * c);
  auto x = mat.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return finish(make_node({c, r}, std::move(out), {&mat}), [r, c](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) x.accumulate(i * c + j, self.grad[j * r + i]);
  });
}

Tensor softmax_rows(const Tensor& mat) {
  require_rank("softmax_rows", mat, 2);
  const std::size_t r = mat.rows();
  const std::size_t c = mat.cols();
  std::vector<double> out(r * c);
  auto x = mat.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data() + i * c;
    const double mx = *std::max_element(xr, xr + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (out[i * c + j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= s;
  }
  return finish(make_node(mat.shape(), std::move(out), {&mat}), [r, c](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i) {
      double dotv = 0.0;
      for (std::size_t j = 0; j < c; ++j) dotv += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t idx = i * c + j;
        x.accumulate(idx, rnd(self.precision, self.value[idx] * (self.grad[idx] - dotv)));
      }
    }
  });
}

Tensor layer_norm(const Tensor& mat, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank("layer_norm", mat, 2);
  const std::size_t r = mat.rows();
  const std::size_t c = mat.cols();
  if (gain.numel() != c || bias.numel() != c) shape_fail("layer_norm", mat.shape(), gain.shape());
  std::vector<double> out(r * c);
  auto xhat = std::make_shared<std::vector<double>>(r * c);
  auto inv_std = std::make_shared<std::vector<double>>(r);
  auto x = mat.data();
  auto g = gain.data();
  auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* xr = x.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xr[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xr[j] - mu) * is;
      (*xhat)[i * c + j] = h;
      out[i * c + j] = g[j] * h + b[j];
    }
  }
  return finish(make_node(mat.shape(), std::move(out), {&mat, &gain, &bias}), [r, c, xhat, inv_std](Node& self) {
    Node& X = *self.inputs[0];
    Node& G = *self.inputs[1];
    Node& B = *self.inputs[2];
    const auto p = self.precision;
    const auto& dy = self.grad;
    if (G.requires_grad || B.requires_grad) {
      for (std::size_t j = 0; j < c; ++j) {
        double sg = 0.0;
        double sb = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
          sg += dy[i * c + j] * (*xhat)[i * c + j];
          sb += dy[i * c + j];
        }
        if (G.requires_grad) G.accumulate(j, rnd(p, sg));
        if (B.requires_grad) B.accumulate(j, rnd(p, sb));
      }
    }
    if (!X.requires_grad) return;
    std::vector<double> dh(c);
    for (std::size_t i = 0; i < r; ++i) {
      double mean_dh = 0.0;
      double mean_dh_h = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        dh[j] = dy[i * c + j] * G.value[j];
        mean_dh += dh[j];
        mean_dh_h += dh[j] * (*xhat)[i * c + j];
      }
      mean_dh /= static_cast<double>(c);
      mean_dh_h /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) {
        X.accumulate(i * c + j, rnd(p, (*inv_std)[i] * (dh[j] - mean_dh - (*xhat)[i * c + j] * mean_dh_h)));
      }
    }
  });
}

// ---- structural ops ------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t rank = parts.front().rank();
  for (const auto& t : parts) {
    if (std::max<std::size_t>(t.rank(), 1) != std::max<std::size_t>(rank, 1) || t.rank() > 2) {
      shape_fail("concat", parts.front().shape(), t.shape());
    }
  }
  if (rank <= 1) {
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& t : parts) {
      offsets.push_back(out.size());
      out.insert(out.end(), t.data().begin(), t.data().end());
    }
    const std::size_t n = out.size();
    return finish(make_node_list({n}, std::move(out), parts), [offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& in = *self.inputs[k];
        if (!in.requires_grad) continue;
        for (std::size_t i = 0; i < in.value.size(); ++i) in.accumulate(i, self.grad[offsets[k] + i]);
      }
    });
  }
  if (axis == 0) {
    const std::size_t c = parts.front().cols();
    std::size_t rows = 0;
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    for (const auto& t : parts) {
      if (t.cols() != c) shape_fail("concat(axis=0)", parts.front().shape(), t.shape());
      offsets.push_back(out.size());
      out.insert(out.end(), t.data().begin(), t.data().end());
      rows += t.rows();
    }
    return finish(make_node_list({rows, c}, std::move(out), parts), [offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& in = *self.inputs[k];
        if (!in.requires_grad) continue;
        for (std::size_t i = 0; i < in.value.size(); ++i) in.accumulate(i, self.grad[offsets[k] + i]);
      }
    });
  }
  if (axis != 1) throw ContractError("concat: axis must be 0 or 1");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> col_offsets;
  for (const auto& t : parts) {
    if (t.rows() != r) shape_fail("concat(axis=1)", parts.front().shape(), t.shape());
    col_offsets.push_back(total);
    total += t.cols();
  }
  std::vector<double> out(r * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& t = parts[k];
    const std::size_t c = t.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * total + col_offsets[k] + j] = t.data()[i * c + j];
  }
  return finish(make_node_list({r, total}, std::move(out), parts), [col_offsets, r, total](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      Node& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      const std::size_t c = in.shape[1];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) in.accumulate(i * c + j, self.grad[i * total + col_offsets[k] + j]);
    }
  });
}

Tensor slice(const Tensor& v, std::size_t begin, std::size_t end) {
  require_rank("slice", v, 1);
  if (begin > end || end > v.numel()) {
    throw ContractError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                        shape_string(v.shape()));
  }
  std::vector<double> out(v.data().begin() + static_cast<std::ptrdiff_t>(begin),
                          v.data().begin() + static_cast<std::ptrdiff_t>(end));
  return finish(make_node({end - begin}, std::move(out), {&v}), [begin](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.accumulate(begin + i, self.grad[i]);
  });
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t end) {
  require_rank("slice_rows", m, 2);
  if (begin > end || end > m.rows()) {
    throw ContractError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                        shape_string(m.shape()));
  }
  const std::size_t c = m.cols();
  std::vector<double> out(m.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                          m.data().begin() + static_cast<std::ptrdiff_t>(end * c));
  return finish(make_node({end - begin, c}, std::move(out), {&m}), [begin, c](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.accumulate(begin * c + i, self.grad[i]);
  });
}

Tensor slice_cols(const Tensor& m, std::size_t begin, std::size_t end) {
  require_rank("slice_cols", m, 2);
  if (begin > end || end > m.cols()) {
    throw ContractError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                        shape_string(m.shape()));
  }
  const std::size_t r = m.rows();
  const std::size_t c = m.cols();
  const std::size_t w = end - begin;
  std::vector<double> out(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = m.data()[i * c + begin + j];
  return finish(make_node({r, w}, std::move(out), {&m}), [r, c, w, begin](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) x.accumulate(i * c + begin + j, self.grad[i * w + j]);
  });
}

Tensor row(const Tensor& m, std::size_t r) {
  require_rank("row", m, 2);
  if (r >= m.rows()) throw ContractError("row: index " + std::to_string(r) + " outside " + shape_string(m.shape()));
  const std::size_t c = m.cols();
  std::vector<double> out(m.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                          m.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  return finish(make_node({c}, std::move(out), {&m}), [r, c](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t j = 0; j < c; ++j) x.accumulate(r * c + j, self.grad[j]);
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (product(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  std::vector<double> out(a.data().begin(), a.data().end());
  return finish(make_node(std::move(shape), std::move(out), {&a}), [](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.accumulate(i, self.grad[i]);
  });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank("gather_rows", table, 2);
  const std::size_t c = table.cols();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) {
      throw ContractError("gather_rows: id " + std::to_string(ids[i]) + " outside table " + shape_string(table.shape()));
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return finish(make_node({ids.size(), c}, std::move(out), {&table}), [idv, c](Node& self) {
    Node& t = *self.inputs[0];
    if (!t.requires_grad) return;
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) t.accumulate(idv[i] * c + j, self.grad[i * c + j]);
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t m = logits.rows();
  const std::size_t v = logits.cols();
  if (targets.size() != m) {
    throw ContractError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(m) + " rows");
  }
  if (m == 0) throw ContractError("softmax_cross_entropy: no rows");
  auto x = logits.data();
  auto probs = std::make_shared<std::vector<double>>(m * v);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= v) throw ContractError("softmax_cross_entropy: target outside vocabulary");
    const double* xr = x.data() + i * v;
    const double mx = *std::max_element(xr, xr + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(xr[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp(xr[j] - lse);
    total += lse - xr[targets[i]];
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return finish(make_node({}, {total / static_cast<double>(m)}, {&logits}), [probs, tg, m, v](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    const double g = self.grad[0] / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < v; ++j) {
        const double d = (*probs)[i * v + j] - (j == tg[i] ? 1.0 : 0.0);
        x.accumulate(i * v + j, rnd(self.precision, g * d));
      }
  });
}

Tensor stop_gradient(const Tensor& a) {
  auto node = std::make_shared<Node>();
  node->shape = a.shape();
  node->value.assign(a.data().begin(), a.data().end());
  node->precision = g_precision;
  return Tensor(std::move(node));
}

Tensor to_single(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = round_to_single(a.data()[i]);
  auto node = make_node(a.shape(), std::move(out), {&a});
  return finish(node, [](Node& self) {
    Node& x = *self.inputs[0];
    if (!x.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) x.accumulate(i, self.grad[i]);
  });
}

// ---- backward --------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  Node* root = loss.node();
  if (root->backward_done) throw ContractError("backward: graph already consumed; run the forward pass again");
  root->backward_done = true;
  if (!root->requires_grad) {
    log::warn("backward: loss is not connected to any parameter; gradients stay zero");
    return;
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  for (Node* n : order) {
    if (n->inputs.empty()) continue;
    n->inputs.clear();
    n->backward = nullptr;
    if (n != root) n->grad.clear();
  }
}

}  // namespace mlctl::ad
