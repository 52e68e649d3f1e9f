#include "ofb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

#include <Eigen/Core>

namespace ofb {

namespace {

std::uint64_t g_next_node_id = 1;
thread_local MacCounter* g_mac_counter = nullptr;

std::string g_fault_op;
double g_fault_factor = 1.0;

[[noreturn]] void shape_fail(std::string_view op, const Shape& a, const Shape& b,
                             std::string_view why) {
  std::ostringstream os;
  os << op << ": shape mismatch " << shape_str(a) << " vs " << shape_str(b);
  if (!why.empty()) os << " (" << why << ")";
  throw ShapeError(os.str());
}

// True when `suffix` equals the trailing dims of `full`.
bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

std::size_t check_broadcast(std::string_view op, const Tensor& a, const Tensor& b) {
  if (!is_suffix(a.shape(), b.shape()) && b.numel() != 1) {
    shape_fail(op, a.shape(), b.shape(), "second operand must match trailing dims");
  }
  return b.numel();
}

std::size_t last_dim(std::string_view op, const Tensor& x) {
  if (x.rank() == 0) throw ShapeError(std::string(op) + ": needs rank >= 1");
  return x.shape().back();
}

template <class F>
Tensor unary(std::string_view op, const Tensor& x, F&& f,
             std::function<void(const TensorImpl&, const Tensor&)> bw) {
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_result(x.shape(), std::move(out), op, {x},
                     [x, bw = std::move(bw)](const TensorImpl& o) { bw(o, x); });
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

std::size_t numel_of(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(numel_of(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(std::vector<double> values, Shape shape, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
  }
  if (values.size() != numel_of(shape)) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->data = std::move(values);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({value}, {}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
  return impl_->grad;
}

Tensor Tensor::detach() const {
  return from(impl_->data, impl_->shape, false);
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

Tensor make_result(Shape shape, std::vector<double> values, std::string_view op,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward_rule) {
  const std::uint64_t id = g_next_node_id++;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": non-finite output at flat index " << i << " (node " << id << ")";
      throw NumericError(os.str());
    }
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
  if (needs) {
    impl->requires_grad = true;
    auto node = std::make_shared<Node>();
    node->id = id;
    node->op = std::string(op);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward_rule);
    impl->node = std::move(node);
  }
  return Tensor(std::move(impl));
}

void accumulate_grad(const Tensor& t, std::span<const double> g) {
  if (!t.defined() || !t.requires_grad()) return;
  auto& impl = t.impl();
  if (impl.grad.empty()) {
    impl.grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) impl.grad[i] += g[i];
}

namespace {

// Post-order DFS: producers precede consumers.
std::vector<TensorImpl*> topo_order(TensorImpl* root) {
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  seen.insert(root);
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      const Tensor& in = impl->node->inputs[next++];
      TensorImpl* child = in.defined() ? &in.impl() : nullptr;
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;
  auto& root = loss.impl();
  if (root.node && root.node->consumed) {
    throw StateError("backward: graph already differentiated; call reset_graph first");
  }
  auto order = topo_order(&root);
  for (auto* impl : order) {
    if (impl->node) impl->grad.clear();
  }
  root.grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->node || impl->grad.empty()) continue;
    if (!g_fault_op.empty() && impl->node->op == g_fault_op) {
      for (auto& g : impl->grad) g *= g_fault_factor;
    }
    impl->node->backward(*impl);
  }
  if (root.node) root.node->consumed = true;
}

void reset_graph(const Tensor& loss) {
  if (loss.defined() && loss.impl().node) loss.impl().node->consumed = false;
}

MacCounter::MacCounter() : prev_(g_mac_counter) { g_mac_counter = this; }
MacCounter::~MacCounter() { g_mac_counter = prev_; }

void set_backward_fault(std::string op, double factor) {
  g_fault_op = std::move(op);
  g_fault_factor = factor;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t nb = check_broadcast("add", a, b);
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i % nb];
  return make_result(a.shape(), std::move(out), "add", {a, b}, [a, b, nb](const TensorImpl& o) {
    accumulate_grad(a, o.grad);
    if (b.requires_grad()) {
      std::vector<double> gb(nb, 0.0);
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % nb] += o.grad[i];
      accumulate_grad(b, gb);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t nb = check_broadcast("sub", a, b);
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i % nb];
  return make_result(a.shape(), std::move(out), "sub", {a, b}, [a, b, nb](const TensorImpl& o) {
    accumulate_grad(a, o.grad);
    if (b.requires_grad()) {
      std::vector<double> gb(nb, 0.0);
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % nb] -= o.grad[i];
      accumulate_grad(b, gb);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t nb = check_broadcast("mul", a, b);
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i % nb];
  return make_result(a.shape(), std::move(out), "mul", {a, b}, [a, b, nb](const TensorImpl& o) {
    auto as = a.data();
    auto bs = b.data();
    if (a.requires_grad()) {
      std::vector<double> ga(o.grad.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = o.grad[i] * bs[i % nb];
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(nb, 0.0);
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % nb] += o.grad[i] * as[i];
      accumulate_grad(b, gb);
    }
  });
}

namespace {
double floored(double d) { return d >= 0.0 ? d + kEps : d - kEps; }
}  // namespace

Tensor div(const Tensor& a, const Tensor& b) {
  const std::size_t nb = check_broadcast("div", a, b);
  std::vector<double> out(a.numel());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] / floored(bs[i % nb]);
  return make_result(a.shape(), std::move(out), "div", {a, b}, [a, b, nb](const TensorImpl& o) {
    auto as = a.data();
    auto bs = b.data();
    if (a.requires_grad()) {
      std::vector<double> ga(o.grad.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = o.grad[i] / floored(bs[i % nb]);
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(nb, 0.0);
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double d = floored(bs[i % nb]);
        gb[i % nb] -= o.grad[i] * as[i] / (d * d);
      }
      accumulate_grad(b, gb);
    }
  });
}

Tensor affine(const Tensor& x, double scale, double shift) {
  return unary("affine", x, [=](double v) { return scale * v + shift; },
               [scale](const TensorImpl& o, const Tensor& x) {
                 std::vector<double> g(o.grad.size());
                 for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * o.grad[i];
                 accumulate_grad(x, g);
               });
}

Tensor neg(const Tensor& x) { return affine(x, -1.0, 0.0); }

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](const TensorImpl& o, const Tensor& x) {
                 std::vector<double> g(o.grad.size());
                 for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * o.data[i];
                 accumulate_grad(x, g);
               });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw NumericError("log: negative operand " + std::to_string(v));
  }
  return unary("log", x, [](double v) { return std::log(v + kEps); },
               [](const TensorImpl& o, const Tensor& x) {
                 auto xs = x.data();
                 std::vector<double> g(o.grad.size());
                 for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] / (xs[i] + kEps);
                 accumulate_grad(x, g);
               });
}

Tensor tan(const Tensor& x) {
  return unary("tan", x, [](double v) { return std::tan(v); },
               [](const TensorImpl& o, const Tensor& x) {
                 std::vector<double> g(o.grad.size());
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   g[i] = o.grad[i] * (1.0 + o.data[i] * o.data[i]);
                 }
                 accumulate_grad(x, g);
               });
}

Tensor sigmoid(const Tensor& x) {
  auto f = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary("sigmoid", x, f, [](const TensorImpl& o, const Tensor& x) {
    std::vector<double> g(o.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] = o.grad[i] * o.data[i] * (1.0 - o.data[i]);
    }
    accumulate_grad(x, g);
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  auto f = [](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  };
  return unary("gelu", x, f, [](const TensorImpl& o, const Tensor& x) {
    auto xs = x.data();
    std::vector<double> g(o.grad.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xs[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + t) +
                       0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] = o.grad[i] * d;
    }
    accumulate_grad(x, g);
  });
}

Tensor abs(const Tensor& x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](const TensorImpl& o, const Tensor& x) {
                 auto xs = x.data();
                 std::vector<double> g(o.grad.size());
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   g[i] = xs[i] > 0.0 ? o.grad[i] : (xs[i] < 0.0 ? -o.grad[i] : 0.0);
                 }
                 accumulate_grad(x, g);
               });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo < hi)) throw ShapeError("clamp: lo must be below hi");
  return unary("clamp", x, [=](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](const TensorImpl& o, const Tensor& x) {
                 auto xs = x.data();
                 std::vector<double> g(o.grad.size());
                 for (std::size_t i = 0; i < g.size(); ++i) {
                   g[i] = (xs[i] > lo && xs[i] < hi) ? o.grad[i] : 0.0;
                 }
                 accumulate_grad(x, g);
               });
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x) {
  const std::size_t n = last_dim("softmax", x);
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += (y[k] = std::exp(in[k] - mx));
    for (std::size_t k = 0; k < n; ++k) y[k] /= z;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [x, n, rows](const TensorImpl& o) {
    std::vector<double> g(o.grad.size());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* gy = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += gy[k] * y[k];
      for (std::size_t k = 0; k < n; ++k) g[r * n + k] = y[k] * (gy[k] - dot);
    }
    accumulate_grad(x, g);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const Tensor& weights, double eps) {
  const std::size_t n = last_dim("layer_norm", x);
  if (gamma.shape() != Shape{n}) shape_fail("layer_norm", x.shape(), gamma.shape(), "gamma");
  if (beta.shape() != Shape{n}) shape_fail("layer_norm", x.shape(), beta.shape(), "beta");
  const bool weighted = weights.defined();
  if (weighted && weights.shape() != Shape{n}) {
    shape_fail("layer_norm", x.shape(), weights.shape(), "weights");
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> w(n, 1.0);
  if (weighted) std::copy(weights.data().begin(), weights.data().end(), w.begin());
  double wsum = 0.0;
  for (double v : w) wsum += v;
  if (!(wsum > 0.0)) throw NumericError("layer_norm: channel weights sum to zero");

  // Saved per row: mean, 1/sqrt(var+eps), var.
  auto stats = std::make_shared<std::vector<double>>(rows * 3);
  std::vector<double> out(x.numel());
  auto xs = x.data();
  auto gs = gamma.data();
  auto bs = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += w[c] * in[c];
    mu /= wsum;
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += w[c] * (in[c] - mu) * (in[c] - mu);
    var /= wsum;
    const double rstd = 1.0 / std::sqrt(var + eps);
    (*stats)[r * 3] = mu;
    (*stats)[r * 3 + 1] = rstd;
    (*stats)[r * 3 + 2] = var;
    for (std::size_t c = 0; c < n; ++c) {
      out[r * n + c] = (in[c] - mu) * rstd * gs[c] + bs[c];
    }
  }
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta, weights},
      [x, gamma, beta, weights, w = std::move(w), wsum, stats, n, rows](const TensorImpl& o) {
        auto xs = x.data();
        auto gs = gamma.data();
        std::vector<double> gx(x.numel(), 0.0);
        std::vector<double> ggamma(n, 0.0);
        std::vector<double> gbeta(n, 0.0);
        std::vector<double> gw(n, 0.0);
        std::vector<double> gd(n);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* in = xs.data() + r * n;
          const double* gy = o.grad.data() + r * n;
          const double mu = (*stats)[r * 3];
          const double rstd = (*stats)[r * 3 + 1];
          const double var = (*stats)[r * 3 + 2];
          double grstd = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double d = in[c] - mu;
            ggamma[c] += gy[c] * d * rstd;
            gbeta[c] += gy[c];
            const double gn = gy[c] * gs[c];
            gd[c] = gn * rstd;
            grstd += gn * d;
          }
          // rstd = (var + eps)^(-1/2)
          const double gvar = -0.5 * grstd * rstd * rstd * rstd;
          double gsum = -gvar * var / wsum;
          double gmu = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double d = in[c] - mu;
            gd[c] += gvar * 2.0 * w[c] * d / wsum;
            gw[c] += gvar * d * d / wsum;
            gmu -= gd[c];
          }
          gsum -= gmu * mu / wsum;
          for (std::size_t c = 0; c < n; ++c) {
            gx[r * n + c] = gd[c] + gmu * w[c] / wsum;
            gw[c] += gmu * in[c] / wsum;
          }
          for (std::size_t c = 0; c < n; ++c) gw[c] += gsum;
        }
        accumulate_grad(x, gx);
        accumulate_grad(gamma, ggamma);
        accumulate_grad(beta, gbeta);
        if (weights.defined()) accumulate_grad(weights, gw);
      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto mi = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k),
             ni = static_cast<Eigen::Index>(n);
  Map(c, mi, ni).noalias() += ConstMap(a, mi, ki) * ConstMap(b, ki, ni);
}

// ga[m,k] += g[m,n] * b[k,n]^T
void gemm_nt(const double* g, const double* b, double* ga, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto mi = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k),
             ni = static_cast<Eigen::Index>(n);
  Map(ga, mi, ki).noalias() += ConstMap(g, mi, ni) * ConstMap(b, ki, ni).transpose();
}

// gb[k,n] += a[m,k]^T * g[m,n]
void gemm_tn(const double* a, const double* g, double* gb, std::size_t m, std::size_t k,
             std::size_t n) {
  const auto mi = static_cast<Eigen::Index>(m), ki = static_cast<Eigen::Index>(k),
             ni = static_cast<Eigen::Index>(n);
  Map(gb, ki, ni).noalias() += ConstMap(a, mi, ki).transpose() * ConstMap(g, mi, ni);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.dim(0);
    k = a.dim(1);
    n = b.dim(1);
    if (b.dim(0) != k) shape_fail("matmul", a.shape(), b.shape(), "inner dims");
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0);
    m = a.dim(1);
    k = a.dim(2);
    n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) {
      shape_fail("matmul", a.shape(), b.shape(), "batched inner dims");
    }
  } else {
    shape_fail("matmul", a.shape(), b.shape(), "expects rank 2 x 2 or 3 x 3");
  }
  if (g_mac_counter) g_mac_counter->add(static_cast<std::uint64_t>(batch * m * k * n));
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm_nn(a.data().data() + bi * m * k, b.data().data() + bi * k * n, out.data() + bi * m * n,
            m, k, n);
  }
  Shape shape = a.rank() == 2 ? Shape{m, n} : Shape{batch, m, n};
  return make_result(std::move(shape), std::move(out), "matmul", {a, b},
                     [a, b, batch, m, k, n](const TensorImpl& o) {
                       if (a.requires_grad()) {
                         std::vector<double> ga(a.numel(), 0.0);
                         for (std::size_t bi = 0; bi < batch; ++bi) {
                           gemm_nt(o.grad.data() + bi * m * n, b.data().data() + bi * k * n,
                                   ga.data() + bi * m * k, m, k, n);
                         }
                         accumulate_grad(a, ga);
                       }
                       if (b.requires_grad()) {
                         std::vector<double> gb(b.numel(), 0.0);
                         for (std::size_t bi = 0; bi < batch; ++bi) {
                           gemm_tn(a.data().data() + bi * m * k, o.grad.data() + bi * m * n,
                                   gb.data() + bi * k * n, m, k, n);
                         }
                         accumulate_grad(b, gb);
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({}, {s}, "sum", {x}, [x](const TensorImpl& o) {
    accumulate_grad(x, std::vector<double>(x.numel(), o.grad[0]));
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_result({}, {s * inv}, "mean", {x}, [x, inv](const TensorImpl& o) {
    accumulate_grad(x, std::vector<double>(x.numel(), o.grad[0] * inv));
  });
}

namespace {

Tensor reduce_axis(std::string_view op, const Tensor& x, std::size_t axis, double scale) {
  if (axis >= x.rank()) throw ShapeError(std::string(op) + ": axis out of range for " +
                                         shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape shape;
  for (std::size_t i = 0; i < x.rank(); ++i) {
    if (i != axis) shape.push_back(x.dim(i));
  }
  std::vector<double> out(outer * inner, 0.0);
  auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t k = 0; k < n; ++k) {
      const double* in = xs.data() + (o * n + k) * inner;
      double* y = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) y[i] += in[i];
    }
  }
  for (auto& v : out) v *= scale;
  return make_result(std::move(shape), std::move(out), op, {x},
                     [x, outer, inner, n, scale](const TensorImpl& o) {
                       std::vector<double> g(x.numel());
                       for (std::size_t oi = 0; oi < outer; ++oi) {
                         for (std::size_t k = 0; k < n; ++k) {
                           for (std::size_t i = 0; i < inner; ++i) {
                             g[(oi * n + k) * inner + i] = scale * o.grad[oi * inner + i];
                           }
                         }
                       }
                       accumulate_grad(x, g);
                     });
}

}  // namespace

Tensor sum_axis(const Tensor& x, std::size_t axis) { return reduce_axis("sum_axis", x, axis, 1.0); }

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("mean_axis: axis out of range");
  return reduce_axis("mean_axis", x, axis, 1.0 / static_cast<double>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) shape_fail("reshape", x.shape(), shape, "element count");
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x},
                     [x](const TensorImpl& o) { accumulate_grad(x, o.grad); });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> used(r, false);
  for (auto p : perm) {
    if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.dim(perm[i]);
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dim(i);

  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_stride[perm[i]];
    (*src)[flat] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[(*src)[i]];
  return make_result(std::move(out_shape), std::move(out), "permute", {x},
                     [x, src](const TensorImpl& o) {
                       std::vector<double> g(x.numel());
                       for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*src)[i]] = o.grad[i];
                       accumulate_grad(x, g);
                     });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2: needs rank >= 2");
  std::vector<std::size_t> perm(x.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

Tensor slice0(const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() == 0 || count == 0 || start + count > x.dim(0)) {
    throw ShapeError("slice0: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of " + shape_str(x.shape()));
  }
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  std::vector<double> out(x.data().begin() + start * row,
                          x.data().begin() + (start + count) * row);
  return make_result(std::move(shape), std::move(out), "slice0", {x},
                     [x, start, row](const TensorImpl& o) {
                       std::vector<double> g(x.numel(), 0.0);
                       std::copy(o.grad.begin(), o.grad.end(), g.begin() + start * row);
                       accumulate_grad(x, g);
                     });
}

Tensor gather(const Tensor& x, const std::vector<std::size_t>& index, Shape shape) {
  if (numel_of(shape) != index.size()) {
    throw ShapeError("gather: index count " + std::to_string(index.size()) +
                     " does not match shape " + shape_str(shape));
  }
  std::vector<double> out(index.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.numel()) throw ShapeError("gather: index out of range");
    out[i] = xs[index[i]];
  }
  return make_result(std::move(shape), std::move(out), "gather", {x},
                     [x, index](const TensorImpl& o) {
                       std::vector<double> g(x.numel(), 0.0);
                       for (std::size_t i = 0; i < index.size(); ++i) g[index[i]] += o.grad[i];
                       accumulate_grad(x, g);
                     });
}

Tensor scatter(const Tensor& x, const std::vector<std::size_t>& index, std::size_t size) {
  if (index.size() != x.numel()) throw ShapeError("scatter: index count does not match input");
  std::vector<double> out(size, 0.0);
  std::vector<bool> hit(size, false);
  auto xs = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= size || hit[index[i]]) throw ShapeError("scatter: bad or repeated index");
    hit[index[i]] = true;
    out[index[i]] = xs[i];
  }
  return make_result({size}, std::move(out), "scatter", {x}, [x, index](const TensorImpl& o) {
    std::vector<double> g(x.numel());
    for (std::size_t i = 0; i < index.size(); ++i) g[i] = o.grad[index[i]];
    accumulate_grad(x, g);
  });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("softmax_cross_entropy: logits " + shape_str(logits.shape()) +
                     " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.dim(1);
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  auto xs = logits.data();
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = xs.data() + b * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += ((*probs)[b * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) (*probs)[b * k + j] /= z;
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ShapeError("softmax_cross_entropy: label out of range");
    }
    loss += std::log(z) + mx - row[y];
  }
  loss /= static_cast<double>(batch);
  std::vector<int> ys(labels.begin(), labels.end());
  return make_result({}, {loss}, "softmax_cross_entropy", {logits},
                     [logits, probs, ys = std::move(ys), batch, k](const TensorImpl& o) {
                       std::vector<double> g(*probs);
                       const double s = o.grad[0] / static_cast<double>(batch);
                       for (std::size_t b = 0; b < batch; ++b) {
                         g[b * k + ys[b]] -= 1.0;
                         for (std::size_t j = 0; j < k; ++j) g[b * k + j] *= s;
                       }
                       accumulate_grad(logits, g);
                     });
}

Tensor l1_loss(const Tensor& pred, std::span<const double> target, std::span<const double> mask) {
  if (target.size() != pred.numel() || (!mask.empty() && mask.size() != pred.numel())) {
    throw ShapeError("l1_loss: target/mask length does not match " + shape_str(pred.shape()));
  }
  auto ps = pred.data();
  double count = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const double w = mask.empty() ? 1.0 : (mask[i] != 0.0 ? 1.0 : 0.0);
    count += w;
    total += w * std::fabs(ps[i] - target[i]);
  }
  const double loss = count > 0.0 ? total / count : 0.0;
  std::vector<double> tgt(target.begin(), target.end());
  std::vector<double> msk(mask.begin(), mask.end());
  return make_result({}, {loss}, "l1_loss", {pred},
                     [pred, tgt = std::move(tgt), msk = std::move(msk), count](const TensorImpl& o) {
                       std::vector<double> g(pred.numel(), 0.0);
                       if (count > 0.0) {
                         auto ps = pred.data();
                         const double s = o.grad[0] / count;
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           if (!msk.empty() && msk[i] == 0.0) continue;
                           const double d = ps[i] - tgt[i];
                           g[i] = d > 0.0 ? s : (d < 0.0 ? -s : 0.0);
                         }
                       }
                       accumulate_grad(pred, g);
                     });
}

}  // namespace ofb
