#pragma once

#include <cstdint>
#include <vector>

#include "ant/autograd.hpp"
#include "ant/matching.hpp"

namespace ant::obj {

struct ObjectiveConfig {
  double alpha = 0.25;  // cycle weight
  double eps = 1e-9;    // log clamp

  void validate() const;
};

// Reference labels with their vocabulary (sorted distinct class ids).
struct LabelAssignment {
  std::vector<int> labels;
  std::vector<int> vocabulary;

  static LabelAssignment from_labels(std::vector<int> labels);
  int size() const { return static_cast<int>(labels.size()); }
  int classes() const { return static_cast<int>(vocabulary.size()); }
  // Position of `label` in the vocabulary, -1 when absent.
  int index_of(int label) const;
  // Vocabulary positions for each of `labels`, -1 when absent.
  std::vector<int> indices_of(const std::vector<int>& labels) const;
  // M x K one-hot view.
  match::Matrix one_hot() const;
};

struct LossValue {
  double loss = 0.0;
  int contributing = 0;
  int out_of_vocabulary = 0;
};

// Mean over in-vocabulary targets of -log(max(c_hat[j][class_j], eps)).
LossValue forward_match_loss(const match::Matrix& predicted, const std::vector<int>& target_labels,
                             const LabelAssignment& reference, const ObjectiveConfig& cfg);

// Mean over references i of -log(max((T S^T)[i][i], eps)).
double cycle_consistency_loss(const match::Matrix& s, const match::Matrix& t, const ObjectiveConfig& cfg);

double total_loss(double forward, double cycle, const ObjectiveConfig& cfg);

// Differentiable counterparts. `targets` holds vocabulary positions (-1 = excluded);
// padded references are excluded from the cycle mean via ref_valid.
template <class T>
nn::Var<T> forward_loss(const nn::Var<T>& s, const nn::Tensor<T>& reference_one_hot, const std::vector<int>& targets,
                        T eps);
template <class T>
nn::Var<T> cycle_loss(const nn::Var<T>& s, const nn::Var<T>& t, const std::vector<uint8_t>* ref_valid, T eps);

}  // namespace ant::obj
