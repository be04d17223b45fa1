#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major tensors.
// A graph is built implicitly by calling the ops below; backward() walks it in
// reverse topological order. Parameters are leaf nodes whose gradients
// accumulate across backward passes until zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace ant::nn {

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T(0));

  size_t numel() const { return data.size(); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.empty() || shape[0] == 0 ? 0 : static_cast<int>(data.size() / shape[0]); }
  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  // Lazily allocated, same shape as value.
  Tensor<T>& grad_buffer();
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Counts multiply-adds spent in attention score computation, per call site kind.
struct OpCounter {
  long self_scores = 0;
  long cross_scores = 0;
};

// Attention probabilities captured during a forward pass, one matrix per head.
struct AttentionCapture {
  int queries = 0;
  int keys = 0;
  std::vector<std::vector<double>> heads;  // queries x keys, row-major
};

template <class T>
Var<T> constant(Tensor<T> value);
template <class T>
Var<T> parameter(Tensor<T> value);

template <class T>
void backward(const Var<T>& root);

// Ops. All matrices are 2D (rows x cols) unless stated.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false);
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
// a (rows x cols) + bias (cols) broadcast over rows.
template <class T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias);
template <class T>
Var<T> scale(const Var<T>& a, T factor);
// a + factor * b for scalars or equal shapes.
template <class T>
Var<T> axpy(const Var<T>& a, T factor, const Var<T>& b);
template <class T>
Var<T> gelu(const Var<T>& a);
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
// Inverted dropout; identity when rate == 0 or rng == nullptr.
template <class T>
Var<T> dropout(const Var<T>& x, double rate, std::mt19937_64* rng);

// x (batch, channels, H, W) stored as batch x (channels*H*W); weight
// (out_channels x channels*k*k); bias (out_channels).
struct Conv2dShape {
  int channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
};
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const Conv2dShape& shape);
// (batch, channels*H*W) -> (batch, channels), averaging each channel plane.
template <class T>
Var<T> mean_spatial(const Var<T>& x, int channels);

// Multi-head attention core: softmax(Q_h K_h^T * score_scale) V_h per head,
// concatenated. key_valid (keys) masks padded keys; attention dropout is
// applied to the probabilities.
struct AttentionOptions {
  int heads = 1;
  double score_scale = 1.0;
  const std::vector<uint8_t>* key_valid = nullptr;
  double dropout = 0.0;
  std::mt19937_64* rng = nullptr;
  AttentionCapture* capture = nullptr;
  long* score_counter = nullptr;
};
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionOptions& options);

// Softmax over rows i for every column j (each column sums to 1). Rows with
// row_valid[i] == 0 get probability 0.
template <class T>
Var<T> softmax_over_rows(const Var<T>& logits, const std::vector<uint8_t>* row_valid = nullptr);
// Softmax over columns for every row (each row sums to 1).
template <class T>
Var<T> softmax_over_cols(const Var<T>& logits, const std::vector<uint8_t>* col_valid = nullptr);

// Mean over rows r with target[r] >= 0 of -log(max(p[r][target[r]], eps)).
// Scalar output; 0 (and no gradient) when no row contributes.
template <class T>
Var<T> nll_rows(const Var<T>& probabilities, const std::vector<int>& target, T eps);

}  // namespace ant::nn
