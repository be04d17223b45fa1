#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ant/autograd.hpp"
#include "ant/model.hpp"

namespace ant::testing {

// Scalar sum(weights .* x) with a hand-written backward.
template <class T>
nn::Var<T> probe(const nn::Var<T>& x, const std::vector<T>& weights) {
  auto node = std::make_shared<nn::Node<T>>();
  node->value = nn::Tensor<T>({1, 1});
  for (size_t i = 0; i < weights.size(); ++i) node->value.data[0] += weights[i] * x->value.data[i];
  node->requires_grad = x->requires_grad;
  if (node->requires_grad) {
    node->inputs = {x};
    node->backward = [weights](nn::Node<T>& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (size_t i = 0; i < weights.size(); ++i) g.data[i] += weights[i] * self.grad.data[0];
    };
  }
  return node;
}

template <class T>
std::vector<T> random_values(size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(n);
  for (T& x : v) x = static_cast<T>(u(rng));
  return v;
}

template <class T>
nn::Tensor<T> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor<T> t(std::move(shape));
  t.data = random_values<T>(t.numel(), rng, lo, hi);
  return t;
}

template <class T>
model::FrameInputs<T> random_inputs(int segments, int crop, std::mt19937_64& rng) {
  model::FrameInputs<T> in;
  in.crops = random_tensor<T>({segments, 2 * crop * crop}, rng, 0.0, 1.0);
  in.positions = random_tensor<T>({segments, 4}, rng, 0.0, 1.0);
  in.valid.assign(segments, 1);
  return in;
}

inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.crop = 8;
  c.dropout = 0.0;
  c.conv_widths = {4, 8};
  return c;
}

struct GradcheckResult {
  double worst_relative = 0.0;
  std::string worst_name;
  long checked = 0;
};

// Central differences on every element of every parameter; `loss` must
// rebuild the graph from the current parameter values.
// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradcheckResult gradcheck(std::vector<std::pair<std::string, nn::Var<double>>> params,
                                 const std::function<nn::Var<double>()>& loss, double step = 1e-5,
                                 double floor = 1e-7) {
  for (auto& [name, p] : params) p->grad = nn::Tensor<double>();
  nn::backward(loss());
  GradcheckResult r;
  for (auto& [name, p] : params) {
    const std::vector<double> analytic =
        p->grad.data.empty() ? std::vector<double>(p->value.numel(), 0.0) : p->grad.data;
    for (size_t i = 0; i < p->value.numel(); ++i) {
      const double saved = p->value.data[i];
      double plus, minus;
      {
        nn::NoGradGuard guard;
        p->value.data[i] = saved + step;
        plus = loss()->value.data[0];
        p->value.data[i] = saved - step;
        minus = loss()->value.data[0];
      }
      p->value.data[i] = saved;
      const double numeric = (plus - minus) / (2 * step);
      const double rel = std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      if (rel > r.worst_relative) {
        r.worst_relative = rel;
        r.worst_name = name + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  }
  return r;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ant_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace ant::testing
