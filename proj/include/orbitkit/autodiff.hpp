#pragma once

// Recorded-graph reverse-mode differentiation over Tensor values.
//
// A Tape is confined to a single logical computation (one training step, one
// gradient check). Nodes are appended in evaluation order, so the node list is
// topologically sorted by construction and backward() walks it in reverse.

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "orbitkit/tensor.hpp"

namespace orbitkit {

template <typename Real>
class Tape;

/// Handle to a node on a Tape.
template <typename Real>
struct Var {
  Tape<Real>* tape = nullptr;
  std::int32_t id = -1;

  const Tensor<Real>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool valid() const noexcept { return tape != nullptr && id >= 0; }
};

template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<Real>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives a gradient.
  Var<Real> constant(Tensor<Real> value) { return push("constant", std::move(value), {}, nullptr, false); }

  /// Leaf whose gradient is collected by backward().
  Var<Real> variable(Tensor<Real> value) { return push("variable", std::move(value), {}, nullptr, true); }

  /// Record an op output. `fn` receives d(loss)/d(output) and accumulates into the inputs'
  /// gradient slots via grad_slot(). Inputs that do not require grad are never touched.
  Var<Real> record(const char* op, Tensor<Real> value, std::vector<Var<Real>> inputs, BackwardFn fn) {
    bool needs = false;
    std::vector<std::int32_t> ids;
    ids.reserve(inputs.size());
    for (const auto& v : inputs) {
      if (v.tape != this) throw std::invalid_argument(std::string(op) + ": input belongs to another tape");
      ids.push_back(v.id);
      needs = needs || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
    }
    return push(op, std::move(value), std::move(ids), needs ? std::move(fn) : BackwardFn{}, needs);
  }

  const Tensor<Real>& value(Var<Real> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var<Real> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  bool requires_grad(std::int32_t id) const { return nodes_.at(static_cast<std::size_t>(id)).requires_grad; }
  const char* op_name(Var<Real> v) const { return nodes_.at(static_cast<std::size_t>(v.id)).op; }

  /// Gradient accumulator for `v`, zero-filled on first access. Only valid for nodes that
  /// require grad.
  Tensor<Real>& grad_slot(Var<Real> v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (!n.has_grad) {
      n.grad = Tensor<Real>(n.value.shape(), Real(0));
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Gradient after backward(); zeros if the node was unreachable from the loss.
  Tensor<Real> grad(Var<Real> v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.has_grad ? n.grad : Tensor<Real>(n.value.shape(), Real(0));
  }

  void backward(Var<Real> loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
    Node& root = nodes_.at(static_cast<std::size_t>(loss.id));
    if (root.value.size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(root.value.shape()));
    if (!root.requires_grad) return;
    grad_slot(loss).fill(Real(1));
    for (std::int32_t id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.has_grad || !n.backward) continue;
      n.backward(*this, n.grad);
      // Intermediate gradients are not needed once propagated.
      if (!n.inputs.empty()) n.grad = Tensor<Real>();
      n.has_grad = n.inputs.empty();
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// When set, every recorded value is scanned for NaN/Inf.
  bool check_finite = true;

 private:
  struct Node {
    const char* op;
    Tensor<Real> value;
    Tensor<Real> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
  };

  Var<Real> push(const char* op, Tensor<Real> value, std::vector<std::int32_t> inputs, BackwardFn fn, bool req) {
    if (check_finite && !value.all_finite())
      throw NumericalError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{op, std::move(value), {}, false, req, std::move(inputs), std::move(fn)});
    return Var<Real>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::deque<Node> nodes_;
};

namespace ad {

// Elementwise, same shape.
template <typename Real> Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> sub(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> mul(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> scale(Var<Real> a, Real s);
template <typename Real> Var<Real> add_scalar(Var<Real> a, Real s);
template <typename Real> Var<Real> silu(Var<Real> a);

// Trailing-axis broadcasts: x is [..., d], the row operand is [d].
template <typename Real> Var<Real> add_rows(Var<Real> x, Var<Real> row);
template <typename Real> Var<Real> mul_rows(Var<Real> x, Var<Real> row);
/// (1 + scale) * x + shift with shift/scale of shape [d].
template <typename Real> Var<Real> modulate_rows(Var<Real> x, Var<Real> shift, Var<Real> scale);
/// (1 + sigma) * z + mu, all operands the same shape.
template <typename Real> Var<Real> adaln_modulate(Var<Real> z, Var<Real> mu, Var<Real> sigma);

/// Batched product [..., m, k] x [..., k, n] with identical leading dims.
template <typename Real> Var<Real> matmul(Var<Real> a, Var<Real> b);
/// x [..., k] * w [k, n] (+ b [n]); composed from reshape/matmul/add_rows.
template <typename Real> Var<Real> linear(Var<Real> x, Var<Real> w, std::type_identity_t<std::optional<Var<Real>>> b = std::nullopt);

template <typename Real> Var<Real> reshape(Var<Real> x, Shape shape);
template <typename Real> Var<Real> permute(Var<Real> x, std::vector<int> axes);
template <typename Real> Var<Real> concat(const std::vector<Var<Real>>& parts, int axis);
template <typename Real> Var<Real> slice(Var<Real> x, int axis, std::int64_t start, std::int64_t length);

template <typename Real> Var<Real> sum(Var<Real> x);
template <typename Real> Var<Real> mean(Var<Real> x);
/// Mean of squared differences over all elements.
template <typename Real> Var<Real> mse(Var<Real> a, Var<Real> b);

template <typename Real>
Var<Real> layer_norm(Var<Real> x, Var<Real> gain, Var<Real> bias, Real eps = Real(1e-5));

/// softmax(q k^T / sqrt(dh)) v over [B, heads, S, dh] operands.
template <typename Real> Var<Real> attention(Var<Real> q, Var<Real> k, Var<Real> v);

/// Cross-correlation. x [B,C,H,W], w [O,C,kh,kw], bias [O].
template <typename Real>
Var<Real> conv2d(Var<Real> x, Var<Real> w, std::type_identity_t<std::optional<Var<Real>>> bias, int stride, int pad);
/// Adjoint of conv2d. x [B,Cin,H,W], w [Cin,Cout,kh,kw], bias [Cout];
/// output side (H-1)*stride - 2*pad + k.
template <typename Real>
Var<Real> conv_transpose2d(Var<Real> x, Var<Real> w, std::type_identity_t<std::optional<Var<Real>>> bias, int stride, int pad);

}  // namespace ad

/// Sinusoidal features of `positions` (no gradient): out[i] = [sin(p_i w_j), cos(p_i w_j)],
/// w_j = max_period^(-j/half).
template <typename Real>
Tensor<Real> sinusoidal_embedding(std::span<const Real> positions, int dim, double max_period = 10000.0);

}  // namespace orbitkit
