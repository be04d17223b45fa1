#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ant/kernels.hpp"

namespace ant::kernels {
namespace {

// Below this many multiply-adds the OpenMP fork costs more than it saves.
constexpr long kParallelWork = 1L << 15;

constexpr int kColumnBlock = 256;

template <class T>
void scale_output(int m, int n, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    T* row = c + static_cast<size_t>(i) * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
}

// C += alpha * A * B, A is m x k (lda), B is k x n (ldb).
template <class T>
void gemm_nn(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  const int row_blocks = (m + 3) / 4;
  const bool parallel = static_cast<long>(m) * n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (int rb = 0; rb < row_blocks; ++rb) {
    const int i0 = rb * 4;
    const int rows = std::min(4, m - i0);
    for (int j0 = 0; j0 < n; j0 += kColumnBlock) {
      const int cols = std::min(kColumnBlock, n - j0);
      T* c0 = c + static_cast<size_t>(i0) * ldc + j0;
      if (rows == 4) {
        T* c1 = c0 + ldc;
        T* c2 = c1 + ldc;
        T* c3 = c2 + ldc;
        const T* a0 = a + static_cast<size_t>(i0) * lda;
        const T* a1 = a0 + lda;
        const T* a2 = a1 + lda;
        const T* a3 = a2 + lda;
        for (int p = 0; p < k; ++p) {
          const T* brow = b + static_cast<size_t>(p) * ldb + j0;
          const T s0 = alpha * a0[p], s1 = alpha * a1[p], s2 = alpha * a2[p], s3 = alpha * a3[p];
#pragma omp simd
          for (int j = 0; j < cols; ++j) {
            const T bv = brow[j];
            c0[j] += s0 * bv;
            c1[j] += s1 * bv;
            c2[j] += s2 * bv;
            c3[j] += s3 * bv;
          }
        }
      } else {
        for (int r = 0; r < rows; ++r) {
          T* crow = c0 + static_cast<size_t>(r) * ldc;
          const T* arow = a + static_cast<size_t>(i0 + r) * lda;
          for (int p = 0; p < k; ++p) {
            const T* brow = b + static_cast<size_t>(p) * ldb + j0;
            const T s = alpha * arow[p];
#pragma omp simd
            for (int j = 0; j < cols; ++j) crow[j] += s * brow[j];
          }
        }
      }
    }
  }
}

// C += alpha * A * B^T, A is m x k (lda), B is n x k (ldb).
template <class T>
void gemm_nt(int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  const bool parallel = static_cast<long>(m) * n * k > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * lda;
    T* crow = c + static_cast<size_t>(i) * ldc;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const T* b0 = b + static_cast<size_t>(j) * ldb;
      const T* b1 = b0 + ldb;
      const T* b2 = b1 + ldb;
      const T* b3 = b2 + ldb;
      T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (int p = 0; p < k; ++p) {
        const T av = arow[p];
        s0 += av * b0[p];
        s1 += av * b1[p];
        s2 += av * b2[p];
        s3 += av * b3[p];
      }
      crow[j] += alpha * s0;
      crow[j + 1] += alpha * s1;
      crow[j + 2] += alpha * s2;
      crow[j + 3] += alpha * s3;
    }
    for (; j < n; ++j) {
      const T* brow = b + static_cast<size_t>(j) * ldb;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += alpha * s;
    }
  }
}

template <class T>
std::vector<T> transpose_copy(const T* src, int rows, int cols, int ld) {
  std::vector<T> out(static_cast<size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) out[static_cast<size_t>(c) * rows + r] = src[static_cast<size_t>(r) * ld + c];
  }
  return out;
}

// Felzenszwalb & Huttenlocher lower-envelope pass over one line. Entries of f
// that are infinite do not contribute parabolas.
void distance_1d(const float* f, int n, float* d, std::vector<int>& v, std::vector<double>& z) {
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = static_cast<double>(f[q]) + static_cast<double>(q) * q;
    double s = -std::numeric_limits<double>::infinity();
    while (k >= 0) {
      const int p = v[k];
      s = (fq - (static_cast<double>(f[p]) + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    if (k < 0) s = -std::numeric_limits<double>::infinity();
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  if (k < 0) {
    std::fill(d, d + n, kUnreachable);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double dq = static_cast<double>(q - v[j]);
    d[q] = static_cast<float>(dq * dq + f[v[j]]);
  }
}

}  // namespace

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  scale_output(m, n, beta, c, ldc);
  if (m == 0 || n == 0 || k == 0) return;
  std::vector<T> a_packed;
  if (trans_a) {
    // stored A is k x m
    a_packed = transpose_copy(a, k, m, lda);
    a = a_packed.data();
    lda = k;
  }
  if (trans_b) {
    gemm_nt(m, n, k, alpha, a, lda, b, ldb, c, ldc);
  } else {
    gemm_nn(m, n, k, alpha, a, lda, b, ldb, c, ldc);
  }
}

template <class T>
void softmax_rows(T* data, int rows, int cols, const uint8_t* col_valid) {
  const bool parallel = static_cast<long>(rows) * cols > kParallelWork;
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < rows; ++i) {
    T* row = data + static_cast<size_t>(i) * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < cols; ++j) {
      if (!col_valid || col_valid[j]) mx = std::max(mx, row[j]);
    }
    T sum = 0;
    for (int j = 0; j < cols; ++j) {
      const T e = (!col_valid || col_valid[j]) ? std::exp(row[j] - mx) : T(0);
      row[j] = e;
      sum += e;
    }
    const T inv = sum > 0 ? T(1) / sum : T(0);
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
}

template <class T>
void softmax_cols(T* data, int rows, int cols, const uint8_t* row_valid) {
  std::vector<T> mx(cols, -std::numeric_limits<T>::infinity());
  std::vector<T> sum(cols, T(0));
  for (int i = 0; i < rows; ++i) {
    if (row_valid && !row_valid[i]) continue;
    const T* row = data + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) mx[j] = std::max(mx[j], row[j]);
  }
  for (int i = 0; i < rows; ++i) {
    T* row = data + static_cast<size_t>(i) * cols;
    if (row_valid && !row_valid[i]) {
      std::fill(row, row + cols, T(0));
      continue;
    }
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx[j]);
      sum[j] += row[j];
    }
  }
  for (int j = 0; j < cols; ++j) sum[j] = sum[j] > 0 ? T(1) / sum[j] : T(0);
  for (int i = 0; i < rows; ++i) {
    T* row = data + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; ++j) row[j] *= sum[j];
  }
}

template <class T>
void im2col(const ConvGeometry& g, const T* input, T* columns) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int kk = g.kernel * g.kernel;
  const size_t plane = static_cast<size_t>(ho) * wo;
  const size_t ncols = static_cast<size_t>(g.batch) * plane;
#pragma omp parallel for schedule(static) if (static_cast<long>(g.col_rows()) * g.col_cols() > kParallelWork)
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* out = columns + (static_cast<size_t>(c) * kk + ky * g.kernel + kx) * ncols;
        for (int n = 0; n < g.batch; ++n) {
          const T* in = input + (static_cast<size_t>(n) * g.channels + c) * g.height * g.width;
          T* dst = out + n * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[oy * wo + ox] =
                  (iy < 0 || ix < 0 || iy >= g.height || ix >= g.width) ? T(0) : in[iy * g.width + ix];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const ConvGeometry& g, const T* columns, T* input_grad) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int kk = g.kernel * g.kernel;
  const size_t plane = static_cast<size_t>(ho) * wo;
  const size_t ncols = static_cast<size_t>(g.batch) * plane;
  // each channel writes only its own input planes
#pragma omp parallel for schedule(static) if (static_cast<long>(g.col_rows()) * g.col_cols() > kParallelWork)
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* src = columns + (static_cast<size_t>(c) * kk + ky * g.kernel + kx) * ncols;
        for (int n = 0; n < g.batch; ++n) {
          T* dst = input_grad + (static_cast<size_t>(n) * g.channels + c) * g.height * g.width;
          const T* s = src + n * plane;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.height) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              if (ix < 0 || ix >= g.width) continue;
              dst[iy * g.width + ix] += s[oy * wo + ox];
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d(const ConvGeometry& g, int out_channels, const T* input, const T* weight, const T* bias, T* output) {
  const int rows = g.col_rows();
  const int cols = g.col_cols();
  std::vector<T> columns(static_cast<size_t>(rows) * cols);
  im2col(g, input, columns.data());
  std::vector<T> product(static_cast<size_t>(out_channels) * cols);
  gemm(false, false, out_channels, cols, rows, T(1), weight, rows, columns.data(), cols, T(0), product.data(), cols);
  const size_t plane = static_cast<size_t>(g.out_height()) * g.out_width();
  for (int n = 0; n < g.batch; ++n) {
    for (int oc = 0; oc < out_channels; ++oc) {
      const T* src = product.data() + static_cast<size_t>(oc) * cols + n * plane;
      T* dst = output + (static_cast<size_t>(n) * out_channels + oc) * plane;
      const T b = bias ? bias[oc] : T(0);
      for (size_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
    }
  }
}

void squared_distance_transform(const Mask& sources, Grid<float>& out) {
  const int w = sources.width;
  const int h = sources.height;
  out = Grid<float>(w, h);
  for (size_t i = 0; i < sources.size(); ++i) out.data[i] = sources.data[i] ? 0.0f : kUnreachable;

#pragma omp parallel if (static_cast<long>(w) * h > kParallelWork)
  {
    const int n = std::max(w, h);
    std::vector<float> f(n), d(n);
    std::vector<double> z(n + 1);
    std::vector<int> v(n);
#pragma omp for schedule(static)
    for (int x = 0; x < w; ++x) {
      for (int y = 0; y < h; ++y) f[y] = out.at(x, y);
      distance_1d(f.data(), h, d.data(), v, z);
      for (int y = 0; y < h; ++y) out.at(x, y) = d[y];
    }
#pragma omp for schedule(static)
    for (int y = 0; y < h; ++y) {
      float* row = &out.at(0, y);
      std::copy(row, row + w, f.begin());
      distance_1d(f.data(), w, d.data(), v, z);
      std::copy(d.begin(), d.begin() + w, row);
    }
  }
}

template void gemm<float>(bool, bool, int, int, int, float, const float*, int, const float*, int, float, float*,
                          int);
template void gemm<double>(bool, bool, int, int, int, double, const double*, int, const double*, int, double,
                           double*, int);
template void softmax_rows<float>(float*, int, int, const uint8_t*);
template void softmax_rows<double>(double*, int, int, const uint8_t*);
template void softmax_cols<float>(float*, int, int, const uint8_t*);
template void softmax_cols<double>(double*, int, int, const uint8_t*);
template void im2col<float>(const ConvGeometry&, const float*, float*);
template void im2col<double>(const ConvGeometry&, const double*, double*);
template void col2im<float>(const ConvGeometry&, const float*, float*);
template void col2im<double>(const ConvGeometry&, const double*, double*);
template void conv2d<float>(const ConvGeometry&, int, const float*, const float*, const float*, float*);
template void conv2d<double>(const ConvGeometry&, int, const double*, const double*, const double*, double*);

}  // namespace ant::kernels
