#include "ant/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "ant/error.hpp"

namespace ant::obj {

void ObjectiveConfig::validate() const {
  require(alpha >= 0.0, ErrorCode::InvalidArgument, "alpha must be non-negative");
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
}

LabelAssignment LabelAssignment::from_labels(std::vector<int> labels) {
  LabelAssignment a;
  a.labels = std::move(labels);
  a.vocabulary = a.labels;
  std::sort(a.vocabulary.begin(), a.vocabulary.end());
  a.vocabulary.erase(std::unique(a.vocabulary.begin(), a.vocabulary.end()), a.vocabulary.end());
  return a;
}

int LabelAssignment::index_of(int label) const {
  auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), label);
  return it != vocabulary.end() && *it == label ? static_cast<int>(it - vocabulary.begin()) : -1;
}

std::vector<int> LabelAssignment::indices_of(const std::vector<int>& values) const {
  std::vector<int> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = index_of(values[i]);
  return out;
}

match::Matrix LabelAssignment::one_hot() const {
  match::Matrix m(size(), classes());
  for (int i = 0; i < size(); ++i) m.at(i, index_of(labels[i])) = 1.0;
  return m;
}

LossValue forward_match_loss(const match::Matrix& predicted, const std::vector<int>& target_labels,
                             const LabelAssignment& reference, const ObjectiveConfig& cfg) {
  require(reference.size() > 0, ErrorCode::EmptyVocabulary, "reference frame has no segments");
  require(predicted.rows == static_cast<int>(target_labels.size()), ErrorCode::LengthMismatch,
          "prediction rows differ from target count");
  require(predicted.cols == reference.classes(), ErrorCode::ShapeMismatch, "prediction width differs from vocabulary");
  LossValue v;
  double total = 0.0;
  for (int j = 0; j < predicted.rows; ++j) {
    const int k = reference.index_of(target_labels[j]);
    if (k < 0) {
      ++v.out_of_vocabulary;
      continue;
    }
    total -= std::log(std::max(predicted.at(j, k), cfg.eps));
    ++v.contributing;
  }
  v.loss = v.contributing > 0 ? total / v.contributing : 0.0;
  return v;
}

double cycle_consistency_loss(const match::Matrix& s, const match::Matrix& t, const ObjectiveConfig& cfg) {
  require(s.rows == t.rows && s.cols == t.cols, ErrorCode::ShapeMismatch, "S and T shapes differ");
  if (s.rows == 0) return 0.0;
  double total = 0.0;
  for (int i = 0; i < s.rows; ++i) {
    double diag = 0.0;
    for (int j = 0; j < s.cols; ++j) diag += t.at(i, j) * s.at(i, j);
    total -= std::log(std::max(diag, cfg.eps));
  }
  return total / s.rows;
}

double total_loss(double forward, double cycle, const ObjectiveConfig& cfg) { return forward + cfg.alpha * cycle; }

template <class T>
nn::Var<T> forward_loss(const nn::Var<T>& s, const nn::Tensor<T>& reference_one_hot, const std::vector<int>& targets,
                        T eps) {
  nn::Var<T> predicted = nn::matmul(s, nn::constant(reference_one_hot), true, false);
  return nn::nll_rows(predicted, targets, eps);
}

template <class T>
nn::Var<T> cycle_loss(const nn::Var<T>& s, const nn::Var<T>& t, const std::vector<uint8_t>* ref_valid, T eps) {
  const int m = s->value.rows();
  nn::Var<T> returned = nn::matmul(t, s, false, true);
  std::vector<int> diag(m);
  for (int i = 0; i < m; ++i) diag[i] = (!ref_valid || (*ref_valid)[i]) ? i : -1;
  return nn::nll_rows(returned, diag, eps);
}

template nn::Var<float> forward_loss<float>(const nn::Var<float>&, const nn::Tensor<float>&, const std::vector<int>&,
                                            float);
template nn::Var<double> forward_loss<double>(const nn::Var<double>&, const nn::Tensor<double>&,
                                              const std::vector<int>&, double);
template nn::Var<float> cycle_loss<float>(const nn::Var<float>&, const nn::Var<float>&, const std::vector<uint8_t>*,
                                          float);
template nn::Var<double> cycle_loss<double>(const nn::Var<double>&, const nn::Var<double>&,
                                            const std::vector<uint8_t>*, double);

}  // namespace ant::obj
