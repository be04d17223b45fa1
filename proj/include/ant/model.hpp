#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ant/autograd.hpp"
#include "ant/segmentation.hpp"

namespace ant::model {

struct ModelConfig {
  int dim = 256;
  int layers = 9;  // block 0 is self-attention, then alternating
  int heads = 4;
  int crop = 32;
  double dropout = 0.1;
  std::vector<int> conv_widths{32, 64, 128, 256};
  int ff_width = 0;  // 0 means 2 * dim
  bool logit_scale = false;

  void validate() const;
  int feed_forward_width() const { return ff_width > 0 ? ff_width : 2 * dim; }
  static bool is_self_block(int layer) { return layer % 2 == 0; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Network inputs for one frame: crops (rows x 2*crop*crop) and normalized
// boxes (rows x 4). Rows with valid == 0 are padding.
template <class T>
struct FrameInputs {
  nn::Tensor<T> crops;
  nn::Tensor<T> positions;
  std::vector<uint8_t> valid;

  int size() const { return crops.rows(); }
  int valid_count() const;
};

template <class T>
FrameInputs<T> frame_inputs(const seg::SegmentedFrame& frame, int crop, int margin);
template <class T>
FrameInputs<T> frame_inputs(const std::vector<seg::SegmentCrop>& crops,
                            const std::vector<std::array<float, 4>>& positions);
// Appends `extra` masked rows.
template <class T>
FrameInputs<T> pad_inputs(const FrameInputs<T>& in, int extra);

enum class AttentionKind { SelfA, SelfB, CrossAB, CrossBA };  // CrossAB: queries from A, keys from B
std::string to_string(AttentionKind kind);

struct AttentionMap {
  int layer = 0;
  AttentionKind kind = AttentionKind::SelfA;
  int head = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> weights;  // rows x cols, row-stochastic
};

struct ForwardOptions {
  bool dropout = false;
  std::mt19937_64* rng = nullptr;
  nn::OpCounter* counter = nullptr;
  std::vector<AttentionMap>* attention = nullptr;
};

template <class T>
struct NamedParam {
  std::string name;
  nn::Var<T> var;
};

template <class T>
struct PairOutput {
  nn::Var<T> xa, xb;  // local features
  nn::Var<T> fa, fb;  // match features
  nn::Var<T> logits;  // M x N
};

template <class T>
class Model {
 public:
  Model(const ModelConfig& cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedParam<T>>& parameters() { return params_; }
  const std::vector<NamedParam<T>>& parameters() const { return params_; }
  nn::Var<T> param(const std::string& name) const;
  size_t parameter_count() const;
  void zero_grad();

  nn::Var<T> encode(const FrameInputs<T>& in, const ForwardOptions& opt) const;
  std::pair<nn::Var<T>, nn::Var<T>> transform(const nn::Var<T>& xa, const nn::Var<T>& xb,
                                              const std::vector<uint8_t>& valid_a,
                                              const std::vector<uint8_t>& valid_b, const ForwardOptions& opt) const;
  nn::Var<T> pair_logits(const nn::Var<T>& fa, const nn::Var<T>& fb) const;
  PairOutput<T> forward(const FrameInputs<T>& a, const FrameInputs<T>& b, const ForwardOptions& opt) const;

  // Copies values between precisions; configs must match.
  template <class U>
  void copy_values_from(const Model<U>& other);

 private:
  nn::Var<T> linear(const nn::Var<T>& x, const std::string& prefix) const;
  nn::Var<T> layer_norm(const nn::Var<T>& x, const std::string& prefix) const;
  nn::Var<T> feed_forward(const nn::Var<T>& x, const std::string& prefix, const ForwardOptions& opt) const;

  ModelConfig cfg_;
  std::vector<NamedParam<T>> params_;
};

// Runs the transformer with dropout disabled and returns every attention matrix.
template <class T>
std::vector<AttentionMap> attention_maps(const Model<T>& model, const FrameInputs<T>& a, const FrameInputs<T>& b);

}  // namespace ant::model
