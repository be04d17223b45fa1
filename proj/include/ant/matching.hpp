#pragma once

#include <cstdint>
#include <vector>

namespace ant::match {

// Dense row-major matrix of doubles.
struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<size_t>(r) * c, fill) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// logits[i][j] = fa_i . fb_j, divided by sqrt(width) when `scaled`.
Matrix pair_logits(const Matrix& fa, const Matrix& fb, bool scaled = false);

// S: softmax over references i for each target column j. Rows with
// ref_valid[i] == 0 get 0.
Matrix forward_match(const Matrix& logits, const std::vector<uint8_t>* ref_valid = nullptr);
// T: softmax over targets j for each reference row i.
Matrix backward_match(const Matrix& logits, const std::vector<uint8_t>* target_valid = nullptr);

// c_hat = S^T C: (N x K) from S (M x N) and reference distributions (M x K).
Matrix propagate(const Matrix& s, const Matrix& reference);

// Row argmax, ties to the lowest index.
std::vector<int> predict_labels(const Matrix& distributions);
// Row maximum.
std::vector<double> confidences(const Matrix& distributions);

}  // namespace ant::match
