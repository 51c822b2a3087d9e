#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "said/numerics/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensor values.
//
// A computation builds a DAG of Nodes; `backward(loss)` walks it in reverse
// topological order and accumulates gradients into every node that requires
// them. Leaves created with `parameter()` keep their gradients until
// `zero_grad()`; intermediate nodes die with the graph.
//
// Sequence activations are time-major: an N x C tensor holds N frames of C
// channels.
namespace said::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Adds g into the gradient buffer, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  /// Gradient after backward(); a zero tensor when none was accumulated.
  Tensor grad() const;
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Overwrites the value of a leaf (optimizer updates).
  Tensor& mutable_value() { return node_->value; }
  void zero_grad() { node_->grad = Tensor(); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Reverse pass from a scalar loss. Throws NonScalarLoss for other shapes.
void backward(const Var& loss);

// Elementwise, shapes must match.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Elementwise product with a constant tensor (masks, weights).
Var mul_const(const Var& a, const Tensor& c);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var silu(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var tanh(const Var& a);
Var exp(const Var& a);
/// |a| with subgradient sign(0) = 0.
Var abs(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

/// a[N x C] + b[C] broadcast over rows.
Var add_row(const Var& a, const Var& b);
/// a[N x C] * b[C] broadcast over rows.
Var mul_row(const Var& a, const Var& b);
/// Repeats a length-C vector into an n x C matrix.
Var broadcast_rows(const Var& v, std::size_t n);

Var matmul(const Var& a, const Var& b);
/// x[N x in] * w[in x out] + b[out].
Var linear(const Var& x, const Var& w, const Var& b);

/// 1D convolution over time.
///
/// x: N x Cin, w: k x Cin x Cout, b: Cout. Output frame t reads input frames
/// t*stride - pad ... t*stride - pad + k - 1 (zero outside).
Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad);

/// Group normalization with statistics computed per frame over each group of
/// channels. x: N x C, gamma/beta: C.
Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Multi-head scaled dot-product attention with an additive bias.
///
/// q: N x H*d, k/v: M x H*d, bias: N x M (may hold -inf). Each head uses the
/// matching column block. When `weights` is non-null it receives the softmax
/// weights as H x N x M.
Var attention(const Var& q, const Var& k, const Var& v, const Tensor& bias, std::size_t heads,
              Tensor* weights = nullptr);

Var concat_cols(const Var& a, const Var& b);
/// out[n] = a[n+1] - a[n] along the leading (time) dimension.
Var time_diff(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Nearest-neighbour upsampling along time: each frame repeated `factor` times.
Var upsample_time(const Var& a, std::size_t factor);

/// Softmax attention forward used by both the autodiff op and plain callers.
/// Returns the N x H*d output; fills `weights` (H x N x M) when given.
Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, std::size_t heads,
                         Tensor* weights);

}  // namespace said::ad
