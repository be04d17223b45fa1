#pragma once

// Numeric kernels behind the autograd ops and the segmentation front end.
//
// ant::kernels holds the OpenMP-parallel implementations used everywhere in
// the library. ant::kernels::reference holds straightforward serial versions
// with identical signatures; they exist for the tests and the benchmark and
// are never called from production paths.

#include <cstdint>
#include <limits>

#include "ant/image.hpp"

namespace ant::kernels {

inline constexpr float kUnreachable = std::numeric_limits<float>::infinity();

// Row-major C = alpha * op(A) * op(B) + beta * C, op(A) is m x k, op(B) is k x n.
// lda/ldb/ldc are the row strides of the stored (untransposed) matrices.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

// In-place softmax over each row of a rows x cols matrix. When col_valid is
// non-null, columns with col_valid[j] == 0 receive probability exactly 0.
template <class T>
void softmax_rows(T* data, int rows, int cols, const uint8_t* col_valid = nullptr);

// Same, but normalizing each column over rows (row_valid masks rows).
template <class T>
void softmax_cols(T* data, int rows, int cols, const uint8_t* row_valid = nullptr);

struct ConvGeometry {
  int batch = 1;
  int channels = 1;
  int height = 1;
  int width = 1;
  int kernel = 3;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int col_rows() const { return channels * kernel * kernel; }
  int col_cols() const { return batch * out_height() * out_width(); }
};

// input (batch, channels, H, W) -> columns (channels*k*k, batch*Ho*Wo).
template <class T>
void im2col(const ConvGeometry& g, const T* input, T* columns);

// Adjoint of im2col: accumulates columns back into input-shaped grad (+=).
template <class T>
void col2im(const ConvGeometry& g, const T* columns, T* input_grad);

// output (batch, out_channels, Ho, Wo) = conv(input, weight (out_channels, channels*k*k)) + bias.
template <class T>
void conv2d(const ConvGeometry& g, int out_channels, const T* input, const T* weight, const T* bias, T* output);

// Squared Euclidean distance from every pixel to the nearest pixel with
// sources != 0; kUnreachable when there is none.
void squared_distance_transform(const Mask& sources, Grid<float>& out);

namespace reference {

template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb,
          T beta, T* c, int ldc);

template <class T>
void softmax_rows(T* data, int rows, int cols, const uint8_t* col_valid = nullptr);

template <class T>
void softmax_cols(T* data, int rows, int cols, const uint8_t* row_valid = nullptr);

template <class T>
void conv2d(const ConvGeometry& g, int out_channels, const T* input, const T* weight, const T* bias, T* output);

void squared_distance_transform(const Mask& sources, Grid<float>& out);

}  // namespace reference
}  // namespace ant::kernels
