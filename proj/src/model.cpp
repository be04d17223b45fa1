#include "ant/model.hpp"

#include <cmath>
#include <unordered_map>

#include "ant/error.hpp"
#include "json.hpp"

namespace ant::model {

using nlohmann::json;
using nn::Tensor;
using nn::Var;

void ModelConfig::validate() const {
  require(dim >= 1, ErrorCode::InvalidArgument, "model dim must be positive");
  require(heads >= 1 && dim % heads == 0, ErrorCode::InvalidArgument, "model dim must be divisible by heads");
  require(layers >= 0, ErrorCode::InvalidArgument, "layer count must be non-negative");
  require(crop >= 1, ErrorCode::InvalidArgument, "crop size must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::InvalidArgument, "dropout must lie in [0, 1)");
  require(!conv_widths.empty(), ErrorCode::InvalidArgument, "backbone needs at least one conv layer");
  for (int w : conv_widths) require(w >= 1, ErrorCode::InvalidArgument, "conv widths must be positive");
  require(ff_width >= 0, ErrorCode::InvalidArgument, "feed-forward width must be non-negative");
}

std::string to_json(const ModelConfig& c) {
  return json{{"dim", c.dim},         {"layers", c.layers},           {"heads", c.heads},
              {"crop", c.crop},       {"dropout", c.dropout},         {"conv_widths", c.conv_widths},
              {"ff_width", c.ff_width}, {"logit_scale", c.logit_scale}}
      .dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("model config: ") + e.what());
  }
  ModelConfig c;
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.crop = j.value("crop", c.crop);
  c.dropout = j.value("dropout", c.dropout);
  c.conv_widths = j.value("conv_widths", c.conv_widths);
  c.ff_width = j.value("ff_width", c.ff_width);
  c.logit_scale = j.value("logit_scale", c.logit_scale);
  c.validate();
  return c;
}

template <class T>
int FrameInputs<T>::valid_count() const {
  int n = 0;
  for (uint8_t v : valid) n += v ? 1 : 0;
  return n;
}

template <class T>
FrameInputs<T> frame_inputs(const std::vector<seg::SegmentCrop>& crops, const std::vector<std::array<float, 4>>& positions) {
  require(crops.size() == positions.size(), ErrorCode::ShapeMismatch, "crop and position counts differ");
  require(!crops.empty(), ErrorCode::ShapeMismatch, "frame has no segments");
  const int m = static_cast<int>(crops.size());
  const int width = static_cast<int>(crops[0].data.size());
  FrameInputs<T> in;
  in.crops = Tensor<T>({m, width});
  in.positions = Tensor<T>({m, 4});
  in.valid.assign(m, 1);
  for (int i = 0; i < m; ++i) {
    require(static_cast<int>(crops[i].data.size()) == width, ErrorCode::ShapeMismatch, "crops differ in size");
    std::copy(crops[i].data.begin(), crops[i].data.end(), in.crops.data.begin() + static_cast<size_t>(i) * width);
    for (int k = 0; k < 4; ++k) in.positions.at(i, k) = static_cast<T>(positions[i][k]);
  }
  return in;
}

template <class T>
FrameInputs<T> frame_inputs(const seg::SegmentedFrame& frame, int crop, int margin) {
  seg::SegParams p;
  p.crop_height = crop;
  p.crop_width = crop;
  p.crop_margin = margin;
  std::vector<std::array<float, 4>> pos;
  pos.reserve(frame.segments.size());
  for (const auto& s : frame.segments) pos.push_back(seg::positional_features(s, frame.image));
  return frame_inputs<T>(seg::make_crops(frame, p), pos);
}

template <class T>
FrameInputs<T> pad_inputs(const FrameInputs<T>& in, int extra) {
  FrameInputs<T> out = in;
  const int m = in.size() + extra;
  out.crops.shape[0] = m;
  out.crops.data.resize(static_cast<size_t>(m) * in.crops.cols(), T(0));
  out.positions.shape[0] = m;
  out.positions.data.resize(static_cast<size_t>(m) * 4, T(0));
  out.valid.resize(m, 0);
  return out;
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::SelfA: return "self-A";
    case AttentionKind::SelfB: return "self-B";
    case AttentionKind::CrossAB: return "cross-A<-B";
    case AttentionKind::CrossBA: return "cross-B<-A";
  }
  return "?";
}

namespace {

template <class T>
struct Init {
  std::mt19937_64 rng;
  std::vector<NamedParam<T>>* params;

  void normal(const std::string& name, std::vector<int> shape, double stddev) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& v : t.data) v = static_cast<T>(dist(rng));
    params->push_back({name, nn::parameter(std::move(t))});
  }
  void fill(const std::string& name, int n, double value) {
    params->push_back({name, nn::parameter(Tensor<T>({n}, static_cast<T>(value)))});
  }
  void linear(const std::string& prefix, int in, int out, double gain = 1.0) {
    normal(prefix + ".w", {in, out}, gain * std::sqrt(1.0 / in));
    fill(prefix + ".b", out, 0.0);
  }
  void norm(const std::string& prefix, int n) {
    fill(prefix + ".g", n, 1.0);
    fill(prefix + ".b", n, 0.0);
  }
};

}  // namespace

template <class T>
Model<T>::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Init<T> init{std::mt19937_64(seed), &params_};
  int channels = 2;
  for (size_t i = 0; i < cfg_.conv_widths.size(); ++i) {
    const int out = cfg_.conv_widths[i];
    const std::string p = "enc.conv" + std::to_string(i);
    init.normal(p + ".w", {out, channels * 9}, std::sqrt(2.0 / (channels * 9)));
    init.fill(p + ".b", out, 0.0);
    channels = out;
  }
  init.normal("enc.squash.w", {cfg_.dim, channels}, std::sqrt(1.0 / channels));
  init.fill("enc.squash.b", cfg_.dim, 0.0);
  init.linear("pos.fc0", 4, cfg_.dim);
  init.linear("pos.fc1", cfg_.dim, cfg_.dim);
  const int ff = cfg_.feed_forward_width();
  // Residual writes shrink with depth; the projection keeps initial logits near unit scale.
  const double residual_gain = 1.0 / std::sqrt(2.0 * std::max(cfg_.layers, 1));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    init.norm(p + ".ln1", cfg_.dim);
    init.linear(p + ".q", cfg_.dim, cfg_.dim);
    init.linear(p + ".k", cfg_.dim, cfg_.dim);
    init.linear(p + ".v", cfg_.dim, cfg_.dim);
    init.linear(p + ".o", cfg_.dim, cfg_.dim, residual_gain);
    init.norm(p + ".ln2", cfg_.dim);
    init.linear(p + ".ff0", cfg_.dim, ff);
    init.linear(p + ".ff1", ff, cfg_.dim, residual_gain);
  }
  init.linear("proj", cfg_.dim, cfg_.dim, std::pow(cfg_.dim, -0.25) / std::sqrt(2.0));
}

template <class T>
Var<T> Model<T>::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.var;
  }
  fail(ErrorCode::NotFound, "no parameter named " + name);
}

template <class T>
size_t Model<T>::parameter_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.var->value.numel();
  return n;
}

template <class T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.var->grad = Tensor<T>();
}

template <class T>
Var<T> Model<T>::linear(const Var<T>& x, const std::string& prefix) const {
  return nn::add_bias(nn::matmul(x, param(prefix + ".w")), param(prefix + ".b"));
}

template <class T>
Var<T> Model<T>::layer_norm(const Var<T>& x, const std::string& prefix) const {
  return nn::layer_norm(x, param(prefix + ".g"), param(prefix + ".b"));
}

template <class T>
Var<T> Model<T>::feed_forward(const Var<T>& x, const std::string& prefix, const ForwardOptions&) const {
  return linear(nn::gelu(linear(x, prefix + ".ff0")), prefix + ".ff1");
}

template <class T>
Var<T> Model<T>::encode(const FrameInputs<T>& in, const ForwardOptions& opt) const {
  const int expected = 2 * cfg_.crop * cfg_.crop;
  require(in.crops.cols() == expected, ErrorCode::ShapeMismatch,
          "crop size does not match the model (expected 2 x " + std::to_string(cfg_.crop) + " x " +
              std::to_string(cfg_.crop) + ")");
  require(in.positions.rows() == in.crops.rows() && in.positions.cols() == 4, ErrorCode::ShapeMismatch,
          "positions must be one 4-vector per crop");
  Var<T> h = nn::constant(in.crops);
  nn::Conv2dShape shape{2, cfg_.crop, cfg_.crop, 3, 2, 1};
  for (size_t i = 0; i < cfg_.conv_widths.size(); ++i) {
    const std::string p = "enc.conv" + std::to_string(i);
    h = nn::gelu(nn::conv2d(h, param(p + ".w"), param(p + ".b"), shape));
    shape.channels = cfg_.conv_widths[i];
    shape.height = (shape.height + 2 - 3) / 2 + 1;
    shape.width = (shape.width + 2 - 3) / 2 + 1;
  }
  nn::Conv2dShape squash{shape.channels, shape.height, shape.width, 1, 1, 0};
  h = nn::conv2d(h, param("enc.squash.w"), param("enc.squash.b"), squash);
  Var<T> visual = nn::mean_spatial(h, cfg_.dim);
  Var<T> pos = linear(nn::gelu(linear(nn::constant(in.positions), "pos.fc0")), "pos.fc1");
  Var<T> x = nn::add(visual, pos);
  if (opt.dropout) x = nn::dropout(x, cfg_.dropout, opt.rng);
  return x;
}

template <class T>
std::pair<Var<T>, Var<T>> Model<T>::transform(const Var<T>& xa, const Var<T>& xb, const std::vector<uint8_t>& valid_a,
                                              const std::vector<uint8_t>& valid_b, const ForwardOptions& opt) const {
  require(xa->value.cols() == cfg_.dim && xb->value.cols() == cfg_.dim, ErrorCode::ShapeMismatch,
          "local features must have width " + std::to_string(cfg_.dim));
  require(valid_a.empty() || static_cast<int>(valid_a.size()) == xa->value.rows(), ErrorCode::ShapeMismatch,
          "mask length differs from row count");
  require(valid_b.empty() || static_cast<int>(valid_b.size()) == xb->value.rows(), ErrorCode::ShapeMismatch,
          "mask length differs from row count");
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
  const double attn_dropout = opt.dropout ? cfg_.dropout : 0.0;

  auto attend = [&](const Var<T>& q, const Var<T>& k, const Var<T>& v, const std::vector<uint8_t>& key_valid, int layer,
                    AttentionKind kind) {
    nn::AttentionOptions o;
    o.heads = cfg_.heads;
    o.score_scale = score_scale;
    o.key_valid = key_valid.empty() ? nullptr : &key_valid;
    o.dropout = attn_dropout;
    o.rng = opt.rng;
    nn::AttentionCapture capture;
    if (opt.attention) o.capture = &capture;
    if (opt.counter) {
      const bool self = kind == AttentionKind::SelfA || kind == AttentionKind::SelfB;
      o.score_counter = self ? &opt.counter->self_scores : &opt.counter->cross_scores;
    }
    Var<T> out = nn::attention(q, k, v, o);
    if (opt.attention) {
      for (int h = 0; h < cfg_.heads; ++h) {
        opt.attention->push_back({layer, kind, h, capture.queries, capture.keys, std::move(capture.heads[h])});
      }
    }
    return out;
  };

  Var<T> a = xa;
  Var<T> b = xb;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    const Var<T> ha = layer_norm(a, p + ".ln1");
    const Var<T> hb = layer_norm(b, p + ".ln1");
    const Var<T> qa = linear(ha, p + ".q"), ka = linear(ha, p + ".k"), va = linear(ha, p + ".v");
    const Var<T> qb = linear(hb, p + ".q"), kb = linear(hb, p + ".k"), vb = linear(hb, p + ".v");
    Var<T> oa, ob;
    if (ModelConfig::is_self_block(l)) {
      oa = attend(qa, ka, va, valid_a, l, AttentionKind::SelfA);
      ob = attend(qb, kb, vb, valid_b, l, AttentionKind::SelfB);
    } else {
      oa = attend(qa, kb, vb, valid_b, l, AttentionKind::CrossAB);
      ob = attend(qb, ka, va, valid_a, l, AttentionKind::CrossBA);
    }
    a = nn::add(a, linear(oa, p + ".o"));
    b = nn::add(b, linear(ob, p + ".o"));
    a = nn::add(a, feed_forward(layer_norm(a, p + ".ln2"), p, opt));
    b = nn::add(b, feed_forward(layer_norm(b, p + ".ln2"), p, opt));
  }
  return {linear(a, "proj"), linear(b, "proj")};
}

template <class T>
Var<T> Model<T>::pair_logits(const Var<T>& fa, const Var<T>& fb) const {
  Var<T> logits = nn::matmul(fa, fb, false, true);
  if (cfg_.logit_scale) logits = nn::scale(logits, static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.dim))));
  return logits;
}

template <class T>
PairOutput<T> Model<T>::forward(const FrameInputs<T>& a, const FrameInputs<T>& b, const ForwardOptions& opt) const {
  PairOutput<T> out;
  out.xa = encode(a, opt);
  out.xb = encode(b, opt);
  std::tie(out.fa, out.fb) = transform(out.xa, out.xb, a.valid, b.valid, opt);
  out.logits = pair_logits(out.fa, out.fb);
  return out;
}

template <class T>
template <class U>
void Model<T>::copy_values_from(const Model<U>& other) {
  require(cfg_ == other.config(), ErrorCode::ShapeMismatch, "model configs differ");
  const auto& src = other.parameters();
  require(src.size() == params_.size(), ErrorCode::ShapeMismatch, "parameter counts differ");
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i].var->value.data;
    const auto& s = src[i].var->value.data;
    require(dst.size() == s.size() && params_[i].name == src[i].name, ErrorCode::ShapeMismatch,
            "parameter layout differs at " + params_[i].name);
    for (size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(s[k]);
  }
}

template <class T>
std::vector<AttentionMap> attention_maps(const Model<T>& model, const FrameInputs<T>& a, const FrameInputs<T>& b) {
  nn::NoGradGuard guard;
  std::vector<AttentionMap> maps;
  ForwardOptions opt;
  opt.attention = &maps;
  model.forward(a, b, opt);
  return maps;
}

#define ANT_MODEL_INSTANTIATE(T)                                                                               \
  template struct FrameInputs<T>;                                                                              \
  template FrameInputs<T> frame_inputs<T>(const seg::SegmentedFrame&, int, int);                               \
  template FrameInputs<T> frame_inputs<T>(const std::vector<seg::SegmentCrop>&,                                \
                                          const std::vector<std::array<float, 4>>&);                           \
  template FrameInputs<T> pad_inputs<T>(const FrameInputs<T>&, int);                                           \
  template class Model<T>;                                                                                     \
  template std::vector<AttentionMap> attention_maps<T>(const Model<T>&, const FrameInputs<T>&, const FrameInputs<T>&);

ANT_MODEL_INSTANTIATE(float)
ANT_MODEL_INSTANTIATE(double)

template void Model<float>::copy_values_from<double>(const Model<double>&);
template void Model<double>::copy_values_from<float>(const Model<float>&);
template void Model<float>::copy_values_from<float>(const Model<float>&);
template void Model<double>::copy_values_from<double>(const Model<double>&);

}  // namespace ant::model
