#include <algorithm>
#include <cmath>
#include <vector>

#include "ant/kernels.hpp"

namespace ant::kernels::reference {

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
        const T bv = trans_b ? b[j * ldb + p] : b[p * ldb + j];
        acc += av * bv;
      }
      T& out = c[i * ldc + j];
      out = alpha * acc + (beta == T(0) ? T(0) : beta * out);
    }
  }
}

template <class T>
void softmax_rows(T* data, int rows, int cols, const uint8_t* col_valid) {
  for (int i = 0; i < rows; ++i) {
    T* row = data + static_cast<size_t>(i) * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < cols; ++j) {
      if (!col_valid || col_valid[j]) mx = std::max(mx, row[j]);
    }
    T sum = 0;
    for (int j = 0; j < cols; ++j) {
      row[j] = (!col_valid || col_valid[j]) ? std::exp(row[j] - mx) : T(0);
      sum += row[j];
    }
    for (int j = 0; j < cols; ++j) row[j] = sum > 0 ? row[j] / sum : T(0);
  }
}

template <class T>
void softmax_cols(T* data, int rows, int cols, const uint8_t* row_valid) {
  for (int j = 0; j < cols; ++j) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < rows; ++i) {
      if (!row_valid || row_valid[i]) mx = std::max(mx, data[i * cols + j]);
    }
    T sum = 0;
    for (int i = 0; i < rows; ++i) {
      T& v = data[i * cols + j];
      v = (!row_valid || row_valid[i]) ? std::exp(v - mx) : T(0);
      sum += v;
    }
    for (int i = 0; i < rows; ++i) data[i * cols + j] = sum > 0 ? data[i * cols + j] / sum : T(0);
  }
}

template <class T>
void conv2d(const ConvGeometry& g, int out_channels, const T* input, const T* weight, const T* bias, T* output) {
  const int ho = g.out_height();
  const int wo = g.out_width();
  const int kk = g.kernel * g.kernel;
  for (int n = 0; n < g.batch; ++n) {
    for (int oc = 0; oc < out_channels; ++oc) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          T acc = bias ? bias[oc] : T(0);
          for (int c = 0; c < g.channels; ++c) {
            for (int ky = 0; ky < g.kernel; ++ky) {
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = oy * g.stride - g.pad + ky;
                const int ix = ox * g.stride - g.pad + kx;
                if (iy < 0 || ix < 0 || iy >= g.height || ix >= g.width) continue;
                const T in = input[((static_cast<size_t>(n) * g.channels + c) * g.height + iy) * g.width + ix];
                acc += in * weight[static_cast<size_t>(oc) * g.channels * kk + c * kk + ky * g.kernel + kx];
              }
            }
          }
          output[((static_cast<size_t>(n) * out_channels + oc) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }
}

void squared_distance_transform(const Mask& sources, Grid<float>& out) {
  out = Grid<float>(sources.width, sources.height, kUnreachable);
  std::vector<std::pair<int, int>> points;
  for (int y = 0; y < sources.height; ++y) {
    for (int x = 0; x < sources.width; ++x) {
      if (sources.at(x, y)) points.emplace_back(x, y);
    }
  }
  for (int y = 0; y < sources.height; ++y) {
    for (int x = 0; x < sources.width; ++x) {
      float best = kUnreachable;
      for (auto [px, py] : points) {
        const float dx = static_cast<float>(px - x);
        const float dy = static_cast<float>(py - y);
        best = std::min(best, dx * dx + dy * dy);
      }
      out.at(x, y) = best;
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
template void conv2d<float>(const ConvGeometry&, int, const float*, const float*, const float*, float*);
template void conv2d<double>(const ConvGeometry&, int, const double*, const double*, const double*, double*);

}  // namespace ant::kernels::reference
