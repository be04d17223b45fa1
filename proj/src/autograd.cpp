#include "ant/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "ant/error.hpp"
#include "ant/kernels.hpp"

namespace ant::nn {
namespace {

thread_local bool g_grad_enabled = true;

template <class T>
bool needs_grad(std::initializer_list<const Var<T>*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Var<T>* v : inputs) {
    if (*v && (*v)->requires_grad) return true;
  }
  return false;
}

template <class T>
Var<T> make_node(Tensor<T> value, std::vector<Var<T>> inputs, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  if (requires_grad) node->inputs = std::move(inputs);
  return node;
}

void check(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::ShapeMismatch, what);
}

template <class T>
void accumulate(Node<T>& target, const T* delta) {
  if (!target.requires_grad) return;
  Tensor<T>& g = target.grad_buffer();
  for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += delta[i];
}

}  // namespace

template <class T>
Tensor<T>::Tensor(std::vector<int> dims, T fill) : shape(std::move(dims)) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  data.assign(n, fill);
}

template <class T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.data.size() != value.data.size()) grad = Tensor<T>(value.shape, T(0));
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <class T>
Var<T> constant(Tensor<T> value) {
  return make_node<T>(std::move(value), {}, false);
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

template <class T>
void backward(const Var<T>& root) {
  check(root->value.numel() == 1, "backward() needs a scalar root");
  if (!root->requires_grad) return;
  // iterative post-order DFS
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && !child->inputs.empty() && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }
  root->grad_buffer().data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.data.empty()) node->backward(*node);
  }
  // release intermediate gradients so repeated passes start clean
  for (Node<T>* node : order) {
    if (!node->inputs.empty()) node->grad = Tensor<T>();
  }
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  const int ar = a->value.rows(), ac = a->value.cols();
  const int br = b->value.rows(), bc = b->value.cols();
  const int m = trans_a ? ac : ar;
  const int k = trans_a ? ar : ac;
  const int kb = trans_b ? bc : br;
  const int n = trans_b ? br : bc;
  check(k == kb, "matmul inner dimensions differ");
  Tensor<T> out({m, n});
  kernels::gemm<T>(trans_a, trans_b, m, n, k, T(1), a->value.data.data(), ac, b->value.data.data(), bc, T(0),
                   out.data.data(), n);
  const bool rg = needs_grad<T>({&a, &b});
  auto node = make_node<T>(std::move(out), {a, b}, rg);
  if (rg) {
    node->backward = [trans_a, trans_b, m, n, k, ac, bc](Node<T>& self) {
      Node<T>& A = *self.inputs[0];
      Node<T>& B = *self.inputs[1];
      const T* g = self.grad.data.data();
      if (A.requires_grad) {
        T* ga = A.grad_buffer().data.data();
        if (!trans_a) {
          // dA (m x k) = G (m x n) * op(B)^T
          kernels::gemm<T>(false, !trans_b, m, k, n, T(1), g, n, B.value.data.data(), bc, T(1), ga, ac);
        } else {
          // dA (k x m) = op(B) * G^T
          kernels::gemm<T>(trans_b, true, k, m, n, T(1), B.value.data.data(), bc, g, n, T(1), ga, ac);
        }
      }
      if (B.requires_grad) {
        T* gb = B.grad_buffer().data.data();
        if (!trans_b) {
          // dB (k x n) = op(A)^T * G
          kernels::gemm<T>(!trans_a, false, k, n, m, T(1), A.value.data.data(), ac, g, n, T(1), gb, bc);
        } else {
          // dB (n x k) = G^T * op(A)
          kernels::gemm<T>(true, trans_a, n, k, m, T(1), g, n, A.value.data.data(), ac, T(1), gb, bc);
        }
      }
    };
  }
  return node;
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check(a->value.numel() == b->value.numel(), "add: element counts differ");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  const bool rg = needs_grad<T>({&a, &b});
  auto node = make_node<T>(std::move(out), {a, b}, rg);
  if (rg) {
    node->backward = [](Node<T>& self) {
      accumulate(*self.inputs[0], self.grad.data.data());
      accumulate(*self.inputs[1], self.grad.data.data());
    };
  }
  return node;
}

template <class T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  const int rows = a->value.rows();
  const int cols = a->value.cols();
  check(static_cast<int>(bias->value.numel()) == cols, "add_bias: bias length differs from column count");
  Tensor<T> out = a->value;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out.data[static_cast<size_t>(r) * cols + c] += bias->value.data[c];
  }
  const bool rg = needs_grad<T>({&a, &bias});
  auto node = make_node<T>(std::move(out), {a, bias}, rg);
  if (rg) {
    node->backward = [rows, cols](Node<T>& self) {
      accumulate(*self.inputs[0], self.grad.data.data());
      Node<T>& b = *self.inputs[1];
      if (b.requires_grad) {
        T* gb = b.grad_buffer().data.data();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) gb[c] += self.grad.data[static_cast<size_t>(r) * cols + c];
        }
      }
    };
  }
  return node;
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a->value;
  for (T& v : out.data) v *= factor;
  const bool rg = needs_grad<T>({&a});
  auto node = make_node<T>(std::move(out), {a}, rg);
  if (rg) {
    node->backward = [factor](Node<T>& self) {
      Node<T>& x = *self.inputs[0];
      T* gx = x.grad_buffer().data.data();
      for (size_t i = 0; i < self.grad.data.size(); ++i) gx[i] += factor * self.grad.data[i];
    };
  }
  return node;
}

template <class T>
Var<T> axpy(const Var<T>& a, T factor, const Var<T>& b) {
  check(a->value.numel() == b->value.numel(), "axpy: element counts differ");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += factor * b->value.data[i];
  const bool rg = needs_grad<T>({&a, &b});
  auto node = make_node<T>(std::move(out), {a, b}, rg);
  if (rg) {
    node->backward = [factor](Node<T>& self) {
      accumulate(*self.inputs[0], self.grad.data.data());
      Node<T>& y = *self.inputs[1];
      if (y.requires_grad) {
        T* gy = y.grad_buffer().data.data();
        for (size_t i = 0; i < self.grad.data.size(); ++i) gy[i] += factor * self.grad.data[i];
      }
    };
  }
  return node;
}

template <class T>
Var<T> gelu(const Var<T>& a) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kA = T(0.044715);
  // 0.5 x (1 + tanh z) written as x * sigmoid(2z) so the loop vectorizes.
  Tensor<T> out = a->value;
  T* y = out.data.data();
  const size_t count = out.data.size();
#pragma omp simd
  for (size_t i = 0; i < count; ++i) {
    const T x = y[i];
    y[i] = x / (T(1) + std::exp(T(-2) * kC * (x + kA * x * x * x)));
  }
  const bool rg = needs_grad<T>({&a});
  auto node = make_node<T>(std::move(out), {a}, rg);
  if (rg) {
    node->backward = [](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      T* gx = in.grad_buffer().data.data();
      const T* x = in.value.data.data();
      const size_t n = self.grad.data.size();
#pragma omp simd
      for (size_t i = 0; i < n; ++i) {
        const T xi = x[i];
        const T s = T(1) / (T(1) + std::exp(T(-2) * kC * (xi + kA * xi * xi * xi)));
        const T d = s + T(2) * xi * s * (T(1) - s) * kC * (T(1) + T(3) * kA * xi * xi);
        gx[i] += d * self.grad.data[i];
      }
    };
  }
  return node;
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const int rows = x->value.rows();
  const int cols = x->value.cols();
  check(static_cast<int>(gamma->value.numel()) == cols && static_cast<int>(beta->value.numel()) == cols,
        "layer_norm: parameter length differs from feature width");
  Tensor<T> out({rows, cols});
  std::vector<T> xhat(static_cast<size_t>(rows) * cols);
  std::vector<T> inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    const T* xr = x->value.data.data() + static_cast<size_t>(r) * cols;
    T mean = 0;
    for (int c = 0; c < cols; ++c) mean += xr[c];
    mean /= cols;
    T var = 0;
    for (int c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= cols;
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (int c = 0; c < cols; ++c) {
      const size_t i = static_cast<size_t>(r) * cols + c;
      xhat[i] = (xr[c] - mean) * inv_std[r];
      out.data[i] = xhat[i] * gamma->value.data[c] + beta->value.data[c];
    }
  }
  const bool rg = needs_grad<T>({&x, &gamma, &beta});
  auto node = make_node<T>(std::move(out), {x, gamma, beta}, rg);
  if (rg) {
    node->backward = [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      Node<T>& g = *self.inputs[1];
      Node<T>& b = *self.inputs[2];
      const T* dy = self.grad.data.data();
      if (g.requires_grad || b.requires_grad) {
        T* gg = g.grad_buffer().data.data();
        T* gb = b.grad_buffer().data.data();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            gg[c] += dy[i] * xhat[i];
            gb[c] += dy[i];
          }
        }
      }
      if (in.requires_grad) {
        T* gx = in.grad_buffer().data.data();
        const T* gamma_v = g.value.data.data();
        for (int r = 0; r < rows; ++r) {
          T mean_d = 0, mean_dx = 0;
          for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            const T d = dy[i] * gamma_v[c];
            mean_d += d;
            mean_dx += d * xhat[i];
          }
          mean_d /= cols;
          mean_dx /= cols;
          for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            const T d = dy[i] * gamma_v[c];
            gx[i] += inv_std[r] * (d - mean_d - xhat[i] * mean_dx);
          }
        }
      }
    };
  }
  return node;
}

template <class T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return x;
  const T keep_scale = T(1) / T(1 - rate);
  std::vector<T> mask(x->value.numel());
  std::bernoulli_distribution keep(1.0 - rate);
  for (T& m : mask) m = keep(*rng) ? keep_scale : T(0);
  Tensor<T> out = x->value;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask[i];
  const bool rg = needs_grad<T>({&x});
  auto node = make_node<T>(std::move(out), {x}, rg);
  if (rg) {
    node->backward = [mask = std::move(mask)](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      T* gx = in.grad_buffer().data.data();
      for (size_t i = 0; i < mask.size(); ++i) gx[i] += mask[i] * self.grad.data[i];
    };
  }
  return node;
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv2dShape& s) {
  kernels::ConvGeometry g;
  g.batch = x->value.rows();
  g.channels = s.channels;
  g.height = s.height;
  g.width = s.width;
  g.kernel = s.kernel;
  g.stride = s.stride;
  g.pad = s.pad;
  check(x->value.cols() == s.channels * s.height * s.width, "conv2d: input does not match geometry");
  const int out_channels = weight->value.rows();
  check(weight->value.cols() == g.col_rows(), "conv2d: weight does not match geometry");
  check(static_cast<int>(bias->value.numel()) == out_channels, "conv2d: bias length");
  const int rows = g.col_rows();
  const int cols = g.col_cols();
  const int plane = g.out_height() * g.out_width();

  std::vector<T> columns(static_cast<size_t>(rows) * cols);
  kernels::im2col(g, x->value.data.data(), columns.data());
  std::vector<T> product(static_cast<size_t>(out_channels) * cols);
  kernels::gemm<T>(false, false, out_channels, cols, rows, T(1), weight->value.data.data(), rows, columns.data(), cols,
                   T(0), product.data(), cols);
  Tensor<T> out({g.batch, out_channels * plane});
  for (int n = 0; n < g.batch; ++n) {
    for (int oc = 0; oc < out_channels; ++oc) {
      const T* src = product.data() + static_cast<size_t>(oc) * cols + static_cast<size_t>(n) * plane;
      T* dst = out.data.data() + (static_cast<size_t>(n) * out_channels + oc) * plane;
      const T b = bias->value.data[oc];
      for (int i = 0; i < plane; ++i) dst[i] = src[i] + b;
    }
  }
  const bool rg = needs_grad<T>({&x, &weight, &bias});
  auto node = make_node<T>(std::move(out), {x, weight, bias}, rg);
  if (rg) {
    node->backward = [g, rows, cols, plane, out_channels, columns = std::move(columns)](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      Node<T>& w = *self.inputs[1];
      Node<T>& b = *self.inputs[2];
      // gradient laid out like `product`: out_channels x (batch*plane)
      std::vector<T> dprod(static_cast<size_t>(out_channels) * cols);
      for (int n = 0; n < g.batch; ++n) {
        for (int oc = 0; oc < out_channels; ++oc) {
          const T* src = self.grad.data.data() + (static_cast<size_t>(n) * out_channels + oc) * plane;
          std::copy(src, src + plane, dprod.data() + static_cast<size_t>(oc) * cols + static_cast<size_t>(n) * plane);
        }
      }
      if (b.requires_grad) {
        T* gb = b.grad_buffer().data.data();
        for (int oc = 0; oc < out_channels; ++oc) {
          const T* row = dprod.data() + static_cast<size_t>(oc) * cols;
          T acc = 0;
          for (int i = 0; i < cols; ++i) acc += row[i];
          gb[oc] += acc;
        }
      }
      if (w.requires_grad) {
        kernels::gemm<T>(false, true, out_channels, rows, cols, T(1), dprod.data(), cols, columns.data(), cols, T(1),
                         w.grad_buffer().data.data(), rows);
      }
      if (in.requires_grad) {
        std::vector<T> dcols(static_cast<size_t>(rows) * cols);
        kernels::gemm<T>(true, false, rows, cols, out_channels, T(1), w.value.data.data(), rows, dprod.data(), cols,
                         T(0), dcols.data(), cols);
        kernels::col2im(g, dcols.data(), in.grad_buffer().data.data());
      }
    };
  }
  return node;
}

template <class T>
Var<T> mean_spatial(const Var<T>& x, int channels) {
  const int batch = x->value.rows();
  const int plane = x->value.cols() / channels;
  check(plane * channels == x->value.cols(), "mean_spatial: width not divisible by channels");
  Tensor<T> out({batch, channels});
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* src = x->value.data.data() + (static_cast<size_t>(n) * channels + c) * plane;
      T acc = 0;
      for (int i = 0; i < plane; ++i) acc += src[i];
      out.data[static_cast<size_t>(n) * channels + c] = acc / plane;
    }
  }
  const bool rg = needs_grad<T>({&x});
  auto node = make_node<T>(std::move(out), {x}, rg);
  if (rg) {
    node->backward = [batch, channels, plane](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      T* gx = in.grad_buffer().data.data();
      for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
          const T g = self.grad.data[static_cast<size_t>(n) * channels + c] / plane;
          T* dst = gx + (static_cast<size_t>(n) * channels + c) * plane;
          for (int i = 0; i < plane; ++i) dst[i] += g;
        }
      }
    };
  }
  return node;
}

template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionOptions& o) {
  const int nq = q->value.rows();
  const int nk = k->value.rows();
  const int dim = q->value.cols();
  check(k->value.cols() == dim && v->value.cols() == dim && v->value.rows() == nk, "attention: operand shapes");
  check(o.heads >= 1 && dim % o.heads == 0, "attention: width not divisible by heads");
  check(o.key_valid == nullptr || static_cast<int>(o.key_valid->size()) == nk, "attention: key mask length");
  const int dh = dim / o.heads;
  const T sc = static_cast<T>(o.score_scale);
  const uint8_t* valid = o.key_valid ? o.key_valid->data() : nullptr;

  std::vector<T> probs(static_cast<size_t>(o.heads) * nq * nk);
  std::vector<T> drop;
  const bool use_dropout = o.dropout > 0.0 && o.rng != nullptr;
  if (use_dropout) {
    drop.resize(probs.size());
    std::bernoulli_distribution keep(1.0 - o.dropout);
    const T keep_scale = T(1) / T(1 - o.dropout);
    for (T& m : drop) m = keep(*o.rng) ? keep_scale : T(0);
  }
  if (o.score_counter) *o.score_counter += static_cast<long>(nq) * nk * dim;
  if (o.capture) {
    o.capture->queries = nq;
    o.capture->keys = nk;
    o.capture->heads.assign(o.heads, std::vector<double>(static_cast<size_t>(nq) * nk));
  }

  Tensor<T> out({nq, dim});
  std::vector<T> mixed(static_cast<size_t>(nq) * nk);
  for (int h = 0; h < o.heads; ++h) {
    T* p = probs.data() + static_cast<size_t>(h) * nq * nk;
    kernels::gemm<T>(false, true, nq, nk, dh, sc, q->value.data.data() + h * dh, dim, k->value.data.data() + h * dh,
                     dim, T(0), p, nk);
    kernels::softmax_rows<T>(p, nq, nk, valid);
    if (o.capture) std::copy(p, p + static_cast<size_t>(nq) * nk, o.capture->heads[h].begin());
    const T* pm = p;
    if (use_dropout) {
      const T* m = drop.data() + static_cast<size_t>(h) * nq * nk;
      for (size_t i = 0; i < mixed.size(); ++i) mixed[i] = p[i] * m[i];
      pm = mixed.data();
    }
    kernels::gemm<T>(false, false, nq, dh, nk, T(1), pm, nk, v->value.data.data() + h * dh, dim, T(0),
                     out.data.data() + h * dh, dim);
  }

  const bool rg = needs_grad<T>({&q, &k, &v});
  auto node = make_node<T>(std::move(out), {q, k, v}, rg);
  if (rg) {
    node->backward = [nq, nk, dim, dh, sc, heads = o.heads, probs = std::move(probs),
                      drop = std::move(drop)](Node<T>& self) {
      Node<T>& Q = *self.inputs[0];
      Node<T>& K = *self.inputs[1];
      Node<T>& V = *self.inputs[2];
      const T* g = self.grad.data.data();
      std::vector<T> dp(static_cast<size_t>(nq) * nk);
      std::vector<T> pm(static_cast<size_t>(nq) * nk);
      for (int h = 0; h < heads; ++h) {
        const T* p = probs.data() + static_cast<size_t>(h) * nq * nk;
        const T* m = drop.empty() ? nullptr : drop.data() + static_cast<size_t>(h) * nq * nk;
        for (size_t i = 0; i < pm.size(); ++i) pm[i] = m ? p[i] * m[i] : p[i];
        if (V.requires_grad) {
          // dV_h += P'^T dO_h
          kernels::gemm<T>(true, false, nk, dh, nq, T(1), pm.data(), nk, g + h * dh, dim, T(1),
                           V.grad_buffer().data.data() + h * dh, dim);
        }
        if (!Q.requires_grad && !K.requires_grad) continue;
        // dP' = dO_h V_h^T
        kernels::gemm<T>(false, true, nq, nk, dh, T(1), g + h * dh, dim, V.value.data.data() + h * dh, dim, T(0),
                         dp.data(), nk);
        for (int i = 0; i < nq; ++i) {
          T* dr = dp.data() + static_cast<size_t>(i) * nk;
          const T* pr = p + static_cast<size_t>(i) * nk;
          if (m) {
            const T* mr = m + static_cast<size_t>(i) * nk;
            for (int j = 0; j < nk; ++j) dr[j] *= mr[j];
          }
          T dot = 0;
          for (int j = 0; j < nk; ++j) dot += dr[j] * pr[j];
          for (int j = 0; j < nk; ++j) dr[j] = pr[j] * (dr[j] - dot);
        }
        if (Q.requires_grad) {
          kernels::gemm<T>(false, false, nq, dh, nk, sc, dp.data(), nk, K.value.data.data() + h * dh, dim, T(1),
                           Q.grad_buffer().data.data() + h * dh, dim);
        }
        if (K.requires_grad) {
          kernels::gemm<T>(true, false, nk, dh, nq, sc, dp.data(), nk, Q.value.data.data() + h * dh, dim, T(1),
                           K.grad_buffer().data.data() + h * dh, dim);
        }
      }
    };
  }
  return node;
}

template <class T>
Var<T> softmax_over_rows(const Var<T>& logits, const std::vector<uint8_t>* row_valid) {
  const int rows = logits->value.rows();
  const int cols = logits->value.cols();
  check(row_valid == nullptr || static_cast<int>(row_valid->size()) == rows, "softmax_over_rows: mask length");
  Tensor<T> out = logits->value;
  kernels::softmax_cols<T>(out.data.data(), rows, cols, row_valid ? row_valid->data() : nullptr);
  const bool rg = needs_grad<T>({&logits});
  auto node = make_node<T>(std::move(out), {logits}, rg);
  if (rg) {
    node->backward = [rows, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      T* gx = in.grad_buffer().data.data();
      const T* y = self.value.data.data();
      const T* dy = self.grad.data.data();
      std::vector<T> dot(cols, T(0));
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) dot[j] += dy[static_cast<size_t>(i) * cols + j] * y[static_cast<size_t>(i) * cols + j];
      }
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
          const size_t idx = static_cast<size_t>(i) * cols + j;
          gx[idx] += y[idx] * (dy[idx] - dot[j]);
        }
      }
    };
  }
  return node;
}

template <class T>
Var<T> softmax_over_cols(const Var<T>& logits, const std::vector<uint8_t>* col_valid) {
  const int rows = logits->value.rows();
  const int cols = logits->value.cols();
  check(col_valid == nullptr || static_cast<int>(col_valid->size()) == cols, "softmax_over_cols: mask length");
  Tensor<T> out = logits->value;
  kernels::softmax_rows<T>(out.data.data(), rows, cols, col_valid ? col_valid->data() : nullptr);
  const bool rg = needs_grad<T>({&logits});
  auto node = make_node<T>(std::move(out), {logits}, rg);
  if (rg) {
    node->backward = [rows, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      T* gx = in.grad_buffer().data.data();
      const T* y = self.value.data.data();
      const T* dy = self.grad.data.data();
      for (int i = 0; i < rows; ++i) {
        const size_t base = static_cast<size_t>(i) * cols;
        T dot = 0;
        for (int j = 0; j < cols; ++j) dot += dy[base + j] * y[base + j];
        for (int j = 0; j < cols; ++j) gx[base + j] += y[base + j] * (dy[base + j] - dot);
      }
    };
  }
  return node;
}

template <class T>
Var<T> nll_rows(const Var<T>& probabilities, const std::vector<int>& target, T eps) {
  const int rows = probabilities->value.rows();
  const int cols = probabilities->value.cols();
  check(static_cast<int>(target.size()) == rows, "nll_rows: target length differs from row count");
  T total = 0;
  int count = 0;
  for (int r = 0; r < rows; ++r) {
    if (target[r] < 0) continue;
    check(target[r] < cols, "nll_rows: target class out of range");
    total -= std::log(std::max(probabilities->value.at(r, target[r]), eps));
    ++count;
  }
  Tensor<T> out({1, 1});
  out.data[0] = count > 0 ? total / count : T(0);
  const bool rg = needs_grad<T>({&probabilities}) && count > 0;
  auto node = make_node<T>(std::move(out), {probabilities}, rg);
  if (rg) {
    node->backward = [target, count, eps, cols](Node<T>& self) {
      Node<T>& in = *self.inputs[0];
      T* gx = in.grad_buffer().data.data();
      const T g = self.grad.data[0] / count;
      for (size_t r = 0; r < target.size(); ++r) {
        if (target[r] < 0) continue;
        const size_t idx = r * cols + target[r];
        const T p = in.value.data[idx];
        // the clamp has zero slope below eps
        if (p > eps) gx[idx] -= g / p;
      }
    };
  }
  return node;
}

#define ANT_INSTANTIATE(T)                                                                              \
  template struct Tensor<T>;                                                                            \
  template struct Node<T>;                                                                              \
  template Var<T> constant<T>(Tensor<T>);                                                               \
  template Var<T> parameter<T>(Tensor<T>);                                                              \
  template void backward<T>(const Var<T>&);                                                             \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&, bool, bool);                                  \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> add_bias<T>(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale<T>(const Var<T>&, T);                                                           \
  template Var<T> axpy<T>(const Var<T>&, T, const Var<T>&);                                             \
  template Var<T> gelu<T>(const Var<T>&);                                                               \
  template Var<T> layer_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, T);                        \
  template Var<T> dropout<T>(const Var<T>&, double, std::mt19937_64*);                                  \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Conv2dShape&);           \
  template Var<T> mean_spatial<T>(const Var<T>&, int);                                                  \
  template Var<T> attention<T>(const Var<T>&, const Var<T>&, const Var<T>&, const AttentionOptions&);   \
  template Var<T> softmax_over_rows<T>(const Var<T>&, const std::vector<uint8_t>*);                     \
  template Var<T> softmax_over_cols<T>(const Var<T>&, const std::vector<uint8_t>*);                     \
  template Var<T> nll_rows<T>(const Var<T>&, const std::vector<int>&, T);

ANT_INSTANTIATE(float)
ANT_INSTANTIATE(double)

}  // namespace ant::nn
