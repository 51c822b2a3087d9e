#include "said/numerics/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "said/error.hpp"
#include "said/numerics/linalg.hpp"

namespace said::ad {

void Node::accumulate(const Tensor& g) {
  if (grad.empty() && !value.empty()) {
    grad = g;
    return;
  }
  grad += g;
}

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Tensor Var::grad() const {
  if (node_->grad.same_shape(node_->value)) return node_->grad;
  return Tensor(node_->value.shape());
}

namespace {

using BackwardFn = std::function<void(Node&)>;

Var make(Tensor value, std::vector<std::shared_ptr<Node>> parents, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionMismatch(std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

void require_rank2(const Var& a, const char* op) {
  if (a.value().rank() != 2) throw DimensionMismatch(std::string(op) + ": expected N x C, got " + shape_string(a.shape()));
}

// Applies f elementwise; df(x, y) gives the local derivative from input and output.
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
  Tensor out(a.shape());
  const auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return make(out, {a.node()}, [df](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    Tensor& g = p.grad_buffer();
    const auto x = p.value.data();
    const auto y = self.value.data();
    const auto gy = self.grad.data();
    for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (loss.value().size() != 1) throw NonScalarLoss("backward: loss has shape " + shape_string(loss.shape()));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && p->backward_fn && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  loss.node()->accumulate(Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
  // Free intermediate gradients so a retained graph does not pin memory.
  for (Node* n : order) {
    if (n->backward_fn) n->grad = Tensor();
  }
}

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  return make(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  return make(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad * -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make(out, {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
    }
    if (y.requires_grad) {
      Tensor& g = y.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
    }
  });
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.shape() != c.shape()) throw DimensionMismatch("mul_const: shape mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * c[i];
  return make(out, {a.node()}, [c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c[i];
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a.node()}, [s](Node& self) { self.parents[0]->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return make(out, {a.node()}, [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Var silu(const Var& a) {
  return unary(
      a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return make(Tensor::scalar(s), {a.node()}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double gs = self.grad[0];
    for (double& v : g.data()) v += gs;
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionMismatch("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var add_row(const Var& a, const Var& b) {
  require_rank2(a, "add_row");
  const std::size_t n = a.value().rows(), c = a.value().cols();
  if (b.value().size() != c) throw DimensionMismatch("add_row: bias length mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) += b.value()[j];
  return make(out, {a.node(), b.node()}, [n, c](Node& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j);
    }
  });
}

Var mul_row(const Var& a, const Var& b) {
  require_rank2(a, "mul_row");
  const std::size_t n = a.value().rows(), c = a.value().cols();
  if (b.value().size() != c) throw DimensionMismatch("mul_row: scale length mismatch");
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) *= b.value()[j];
  return make(out, {a.node(), b.node()}, [n, c](Node& self) {
    Node& x = *self.parents[0];
    Node& s = *self.parents[1];
    if (x.requires_grad) {
      Tensor& g = x.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g(i, j) += self.grad(i, j) * s.value[j];
    }
    if (s.requires_grad) {
      Tensor& g = s.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j) * x.value(i, j);
    }
  });
}

Var broadcast_rows(const Var& v, std::size_t n) {
  const std::size_t c = v.value().size();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = v.value()[j];
  return make(out, {v.node()}, [n, c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) g[j] += self.grad(i, j);
  });
}

Var matmul(const Var& a, const Var& b) {
  return make(linalg::matmul(a.value(), b.value()), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) x.accumulate(linalg::matmul_nt(self.grad, y.value));
    if (y.requires_grad) y.accumulate(linalg::matmul_tn(x.value, self.grad));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad) {
  require_rank2(x, "conv1d");
  const Tensor& wv = w.value();
  if (wv.rank() != 3) throw DimensionMismatch("conv1d: weight must be k x Cin x Cout");
  const std::size_t n = x.value().rows(), cin = x.value().cols();
  const std::size_t k = wv.dim(0), cout = wv.dim(2);
  if (wv.dim(1) != cin) throw DimensionMismatch("conv1d: channel mismatch");
  if (b.value().size() != cout) throw DimensionMismatch("conv1d: bias length mismatch");
  if (stride == 0 || n + 2 * pad < k) throw DimensionMismatch("conv1d: sequence too short for kernel");
  const std::size_t nout = (n + 2 * pad - k) / stride + 1;

  Tensor out({nout, cout});
  const double* px = x.value().data().data();
  const double* pw = wv.data().data();
  for (std::size_t t = 0; t < nout; ++t) {
    double* yo = &out(t, 0);
    for (std::size_t o = 0; o < cout; ++o) yo[o] = b.value()[o];
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
      const double* xs = px + static_cast<std::size_t>(src) * cin;
      const double* wj = pw + j * cin * cout;
      for (std::size_t c = 0; c < cin; ++c) {
        const double xv = xs[c];
        if (xv == 0.0) continue;
        const double* wc = wj + c * cout;
        for (std::size_t o = 0; o < cout; ++o) yo[o] += xv * wc[o];
      }
    }
  }

  return make(out, {x.node(), w.node(), b.node()}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node& bn = *self.parents[2];
    const double* gy = self.grad.data().data();
    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (std::size_t t = 0; t < nout; ++t)
        for (std::size_t o = 0; o < cout; ++o) gb[o] += gy[t * cout + o];
    }
    double* gx = xn.requires_grad ? xn.grad_buffer().data().data() : nullptr;
    double* gw = wn.requires_grad ? wn.grad_buffer().data().data() : nullptr;
    const double* xv = xn.value.data().data();
    const double* wv2 = wn.value.data().data();
    for (std::size_t t = 0; t < nout; ++t) {
      const double* go = gy + t * cout;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
        const std::size_t s = static_cast<std::size_t>(src);
        for (std::size_t c = 0; c < cin; ++c) {
          const double* wc = wv2 + (j * cin + c) * cout;
          if (gx) {
            double acc = 0.0;
            for (std::size_t o = 0; o < cout; ++o) acc += go[o] * wc[o];
            gx[s * cin + c] += acc;
          }
          if (gw) {
            const double xval = xv[s * cin + c];
            double* gwc = gw + (j * cin + c) * cout;
            for (std::size_t o = 0; o < cout; ++o) gwc[o] += xval * go[o];
          }
        }
      }
    }
  });
}

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps) {
  require_rank2(x, "group_norm");
  const std::size_t n = x.value().rows(), c = x.value().cols();
  if (groups == 0 || c % groups != 0) throw DimensionMismatch("group_norm: channels not divisible by groups");
  if (gamma.value().size() != c || beta.value().size() != c) throw DimensionMismatch("group_norm: affine size mismatch");
  const std::size_t gs = c / groups;

  Tensor xhat({n, c});
  std::vector<double> rstd(n * groups);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      double mu = 0.0;
      for (std::size_t j = g * gs; j < (g + 1) * gs; ++j) mu += x.value()(i, j);
      mu /= static_cast<double>(gs);
      double var = 0.0;
      for (std::size_t j = g * gs; j < (g + 1) * gs; ++j) {
        const double d = x.value()(i, j) - mu;
        var += d * d;
      }
      var /= static_cast<double>(gs);
      const double r = 1.0 / std::sqrt(var + eps);
      rstd[i * groups + g] = r;
      for (std::size_t j = g * gs; j < (g + 1) * gs; ++j) xhat(i, j) = (x.value()(i, j) - mu) * r;
    }
  }
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];

  return make(out, {x.node(), gamma.node(), beta.node()}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& gn = *self.parents[1];
    Node& bn = *self.parents[2];
    const Tensor& gy = self.grad;
    if (gn.requires_grad) {
      Tensor& gg = gn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gg[j] += gy(i, j) * xhat(i, j);
    }
    if (bn.requires_grad) {
      Tensor& gb = bn.grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += gy(i, j);
    }
    if (!xn.requires_grad) return;
    Tensor& gx = xn.grad_buffer();
    const double m = static_cast<double>(gs);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t g = 0; g < groups; ++g) {
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::size_t j = g * gs; j < (g + 1) * gs; ++j) {
          const double d = gy(i, j) * gn.value[j];
          sum_d += d;
          sum_dx += d * xhat(i, j);
        }
        const double r = rstd[i * groups + g];
        for (std::size_t j = g * gs; j < (g + 1) * gs; ++j) {
          const double d = gy(i, j) * gn.value[j];
          gx(i, j) += r * (d - sum_d / m - xhat(i, j) * sum_dx / m);
        }
      }
    }
  });
}

Tensor attention_forward(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, std::size_t heads,
                         Tensor* weights) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw DimensionMismatch("attention: inputs must be matrices");
  const std::size_t n = q.rows(), m = k.rows(), width = q.cols();
  if (k.cols() != width || v.cols() != width || v.rows() != m) throw DimensionMismatch("attention: q/k/v shape mismatch");
  if (bias.rank() != 2 || bias.rows() != n || bias.cols() != m) throw DimensionMismatch("attention: bias must be N x M");
  if (heads == 0 || width % heads != 0) throw DimensionMismatch("attention: width not divisible by heads");
  const std::size_t d = width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor out({n, width});
  Tensor w({heads, n, m});
  std::vector<double> logits(m);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * d;
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += q(i, off + p) * k(j, off + p);
        logits[j] = s * inv_sqrt_d + bias(i, j);
        mx = std::max(mx, logits[j]);
      }
      if (mx == -std::numeric_limits<double>::infinity() || std::isnan(mx)) {
        bool open = false;
        for (std::size_t j = 0; j < m && !open; ++j) open = bias(i, j) != -std::numeric_limits<double>::infinity();
        if (!open) throw AllMaskedRow("attention: row " + std::to_string(i) + " is fully masked");
        // Non-finite scores (NaN inputs) propagate instead of being reported as masking.
        for (std::size_t j = 0; j < m; ++j) w.at(h, i, j) = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t p = 0; p < d; ++p) out(i, off + p) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        // exp(-inf) is exactly 0, so masked keys get zero weight.
        logits[j] = std::exp(logits[j] - mx);
        z += logits[j];
      }
      for (std::size_t j = 0; j < m; ++j) {
        const double a = logits[j] / z;
        w.at(h, i, j) = a;
        if (a == 0.0) continue;
        for (std::size_t p = 0; p < d; ++p) out(i, off + p) += a * v(j, off + p);
      }
    }
  }
  if (weights) *weights = std::move(w);
  return out;
}

Var attention(const Var& q, const Var& k, const Var& v, const Tensor& bias, std::size_t heads, Tensor* weights) {
  Tensor probs;
  Tensor out = attention_forward(q.value(), k.value(), v.value(), bias, heads, &probs);
  if (weights) *weights = probs;
  const std::size_t n = q.value().rows(), m = k.value().rows(), width = q.value().cols();
  const std::size_t d = width / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  return make(std::move(out), {q.node(), k.node(), v.node()}, [=](Node& self) {
    Node& qn = *self.parents[0];
    Node& kn = *self.parents[1];
    Node& vn = *self.parents[2];
    const Tensor& go = self.grad;
    Tensor* gq = qn.requires_grad ? &qn.grad_buffer() : nullptr;
    Tensor* gk = kn.requires_grad ? &kn.grad_buffer() : nullptr;
    Tensor* gv = vn.requires_grad ? &vn.grad_buffer() : nullptr;
    std::vector<double> dp(m);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * d;
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double a = probs.at(h, i, j);
          double s = 0.0;
          if (a != 0.0) {
            for (std::size_t p = 0; p < d; ++p) {
              s += go(i, off + p) * vn.value(j, off + p);
              if (gv) (*gv)(j, off + p) += a * go(i, off + p);
            }
          }
          dp[j] = s;
          dot += a * s;
        }
        for (std::size_t j = 0; j < m; ++j) {
          const double a = probs.at(h, i, j);
          if (a == 0.0) continue;
          const double ds = a * (dp[j] - dot) * inv_sqrt_d;
          for (std::size_t p = 0; p < d; ++p) {
            if (gq) (*gq)(i, off + p) += ds * kn.value(j, off + p);
            if (gk) (*gk)(j, off + p) += ds * qn.value(i, off + p);
          }
        }
      }
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  const std::size_t n = a.value().rows(), ca = a.value().cols(), cb = b.value().cols();
  if (b.value().rows() != n) throw DimensionMismatch("concat_cols: row mismatch");
  Tensor out({n, ca + cb});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < ca; ++j) out(i, j) = a.value()(i, j);
    for (std::size_t j = 0; j < cb; ++j) out(i, ca + j) = b.value()(i, j);
  }
  return make(out, {a.node(), b.node()}, [n, ca, cb](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) g(i, j) += self.grad(i, j);
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) g(i, j) += self.grad(i, ca + j);
    }
  });
}

Var time_diff(const Var& a) {
  require_rank2(a, "time_diff");
  const std::size_t n = a.value().rows(), c = a.value().cols();
  if (n < 2) throw DimensionMismatch("time_diff: need at least two frames");
  Tensor out({n - 1, c});
  for (std::size_t i = 0; i + 1 < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = a.value()(i + 1, j) - a.value()(i, j);
  return make(out, {a.node()}, [n, c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        g(i + 1, j) += self.grad(i, j);
        g(i, j) -= self.grad(i, j);
      }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(shape);
  return make(std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    p.accumulate(self.grad.reshaped(p.value.shape()));
  });
}

Var upsample_time(const Var& a, std::size_t factor) {
  require_rank2(a, "upsample_time");
  const std::size_t n = a.value().rows(), c = a.value().cols();
  Tensor out({n * factor, c});
  for (std::size_t i = 0; i < n * factor; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = a.value()(i / factor, j);
  return make(out, {a.node()}, [n, c, factor](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < n * factor; ++i)
      for (std::size_t j = 0; j < c; ++j) g(i / factor, j) += self.grad(i, j);
  });
}

}  // namespace said::ad
