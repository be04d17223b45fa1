#include "ant/matching.hpp"

#include <algorithm>
#include <cmath>

#include "ant/error.hpp"
#include "ant/kernels.hpp"

namespace ant::match {

Matrix Matrix::transposed() const {
  Matrix t(cols, rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) t.at(c, r) = at(r, c);
  }
  return t;
}

Matrix pair_logits(const Matrix& fa, const Matrix& fb, bool scaled) {
  require(fa.cols == fb.cols, ErrorCode::ShapeMismatch, "feature widths differ");
  Matrix out(fa.rows, fb.rows);
  const double alpha = scaled ? 1.0 / std::sqrt(static_cast<double>(fa.cols)) : 1.0;
  kernels::gemm<double>(false, true, fa.rows, fb.rows, fa.cols, alpha, fa.data.data(), fa.cols, fb.data.data(),
                        fb.cols, 0.0, out.data.data(), out.cols);
  return out;
}

Matrix forward_match(const Matrix& logits, const std::vector<uint8_t>* ref_valid) {
  require(!ref_valid || static_cast<int>(ref_valid->size()) == logits.rows, ErrorCode::ShapeMismatch,
          "reference mask length differs from row count");
  Matrix s = logits;
  kernels::softmax_cols<double>(s.data.data(), s.rows, s.cols, ref_valid ? ref_valid->data() : nullptr);
  return s;
}

Matrix backward_match(const Matrix& logits, const std::vector<uint8_t>* target_valid) {
  require(!target_valid || static_cast<int>(target_valid->size()) == logits.cols, ErrorCode::ShapeMismatch,
          "target mask length differs from column count");
  Matrix t = logits;
  kernels::softmax_rows<double>(t.data.data(), t.rows, t.cols, target_valid ? target_valid->data() : nullptr);
  return t;
}

Matrix propagate(const Matrix& s, const Matrix& reference) {
  require(s.rows == reference.rows, ErrorCode::ShapeMismatch, "match matrix rows differ from reference count");
  Matrix out(s.cols, reference.cols);
  kernels::gemm<double>(true, false, s.cols, reference.cols, s.rows, 1.0, s.data.data(), s.cols, reference.data.data(),
                        reference.cols, 0.0, out.data.data(), out.cols);
  return out;
}

std::vector<int> predict_labels(const Matrix& d) {
  std::vector<int> labels(d.rows, 0);
  for (int r = 0; r < d.rows; ++r) {
    const double* row = d.data.data() + static_cast<size_t>(r) * d.cols;
    labels[r] = static_cast<int>(std::max_element(row, row + d.cols) - row);
  }
  return labels;
}

std::vector<double> confidences(const Matrix& d) {
  std::vector<double> out(d.rows, 0.0);
  for (int r = 0; r < d.rows; ++r) {
    const double* row = d.data.data() + static_cast<size_t>(r) * d.cols;
    out[r] = d.cols > 0 ? *std::max_element(row, row + d.cols) : 0.0;
  }
  return out;
}

}  // namespace ant::match
