#include "ant/training.hpp"

#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include "ant/checkpoint.hpp"
#include "ant/error.hpp"
#include "ant/evaluation.hpp"
#include "json.hpp"

namespace ant::train {

using nlohmann::json;

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::Correspondence: return "correspondence";
    case LossMode::Color: return "color";
    case LossMode::Both: return "both";
  }
  return "?";
}

LossMode loss_mode_from_string(const std::string& name) {
  if (name == "correspondence") return LossMode::Correspondence;
  if (name == "color") return LossMode::Color;
  if (name == "both") return LossMode::Both;
  fail(ErrorCode::InvalidArgument, "unknown loss mode '" + name + "'");
}

void TrainConfig::validate() const {
  require(lr > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
  require(weight_decay >= 0.0, ErrorCode::InvalidArgument, "weight decay must be non-negative");
  require(clip_norm > 0.0, ErrorCode::InvalidArgument, "clip norm must be positive");
  require(total_steps >= 0 && warmup_steps >= 1, ErrorCode::InvalidArgument, "step counts must be positive");
  require(warmup_steps <= std::max(total_steps, 1L), ErrorCode::InvalidArgument,
          "warmup must not exceed the total step count");
  require(micro_batch >= 1 && accumulation >= 1, ErrorCode::InvalidArgument, "batch sizes must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::InvalidArgument, "dropout must lie in [0, 1)");
  require(eval_horizon >= 1 && eval_stride >= 1, ErrorCode::InvalidArgument, "evaluation horizon and stride must be >= 1");
  require(prefetch >= 1, ErrorCode::InvalidArgument, "prefetch depth must be >= 1");
  objective().validate();
  augment.validate();
}

std::string to_json(const TrainConfig& c) {
  json j{{"lr", c.lr},
         {"weight_decay", c.weight_decay},
         {"clip_norm", c.clip_norm},
         {"warmup_steps", c.warmup_steps},
         {"total_steps", c.total_steps},
         {"micro_batch", c.micro_batch},
         {"accumulation", c.accumulation},
         {"dropout", c.dropout},
         {"loss_mode", to_string(c.loss_mode)},
         {"alpha", c.alpha},
         {"eps", c.eps},
         {"eval_interval", c.eval_interval},
         {"eval_horizon", c.eval_horizon},
         {"eval_stride", c.eval_stride},
         {"seed", c.seed},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"adam_eps", c.adam_eps},
         {"prefetch", c.prefetch}};
  j["augment"] = {{"max_frame_skip", c.augment.max_frame_skip},
                  {"crop_scale_min", c.augment.crop_scale_min},
                  {"jitter_px", c.augment.jitter_px},
                  {"shear", c.augment.shear},
                  {"flip_probability", c.augment.flip_probability}};
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("train config: ") + e.what());
  }
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.micro_batch = j.value("micro_batch", c.micro_batch);
    c.accumulation = j.value("accumulation", c.accumulation);
    c.dropout = j.value("dropout", c.dropout);
    c.loss_mode = loss_mode_from_string(j.value("loss_mode", to_string(c.loss_mode)));
    c.alpha = j.value("alpha", c.alpha);
    c.eps = j.value("eps", c.eps);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.eval_horizon = j.value("eval_horizon", c.eval_horizon);
    c.eval_stride = j.value("eval_stride", c.eval_stride);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.prefetch = j.value("prefetch", c.prefetch);
    if (j.contains("augment")) {
      const json& a = j["augment"];
      c.augment.max_frame_skip = a.value("max_frame_skip", c.augment.max_frame_skip);
      c.augment.crop_scale_min = a.value("crop_scale_min", c.augment.crop_scale_min);
      c.augment.jitter_px = a.value("jitter_px", c.augment.jitter_px);
      c.augment.shear = a.value("shear", c.augment.shear);
      c.augment.flip_probability = a.value("flip_probability", c.augment.flip_probability);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) return static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps) * cfg.lr;
  return cfg.lr;
}

template <class T>
PairExample<T> make_example(const datagen::LabeledFrame& reference, const datagen::LabeledFrame& target, int crop,
                            int margin, int id) {
  PairExample<T> ex;
  ex.id = id;
  ex.reference = model::frame_inputs<T>(reference.frame, crop, margin);
  ex.target = model::frame_inputs<T>(target.frame, crop, margin);
  ex.reference_corr = reference.corr;
  ex.target_corr = target.corr;
  ex.reference_color = reference.color;
  ex.target_color = target.color;
  return ex;
}

template <class T>
PairExample<T> pad_example(const PairExample<T>& ex, int extra_reference, int extra_target) {
  PairExample<T> out = ex;
  out.reference = model::pad_inputs(ex.reference, extra_reference);
  out.target = model::pad_inputs(ex.target, extra_target);
  // labels of ghost slots are never read
  out.reference_corr.resize(out.reference.size(), -1);
  out.reference_color.resize(out.reference.size(), -1);
  out.target_corr.resize(out.target.size(), -1);
  out.target_color.resize(out.target.size(), -1);
  return out;
}

namespace {

// One-hot over the vocabulary of the valid reference rows; padded rows stay zero.
template <class T>
std::pair<nn::Tensor<T>, std::vector<int>> label_targets(const std::vector<int>& reference,
                                                         const std::vector<uint8_t>& ref_valid,
                                                         const std::vector<int>& target,
                                                         const std::vector<uint8_t>& tgt_valid) {
  std::vector<int> valid_labels;
  for (size_t i = 0; i < reference.size(); ++i) {
    if (ref_valid[i]) valid_labels.push_back(reference[i]);
  }
  const obj::LabelAssignment assignment = obj::LabelAssignment::from_labels(valid_labels);
  require(assignment.classes() > 0, ErrorCode::EmptyVocabulary, "reference frame has no segments");
  nn::Tensor<T> one_hot({static_cast<int>(reference.size()), assignment.classes()});
  for (size_t i = 0; i < reference.size(); ++i) {
    if (ref_valid[i]) one_hot.at(static_cast<int>(i), assignment.index_of(reference[i])) = T(1);
  }
  std::vector<int> targets(target.size(), -1);
  for (size_t j = 0; j < target.size(); ++j) {
    if (tgt_valid[j]) targets[j] = assignment.index_of(target[j]);
  }
  return {std::move(one_hot), std::move(targets)};
}

}  // namespace

template <class T>
PairLoss<T> pair_loss(const model::Model<T>& model, const PairExample<T>& ex, LossMode mode,
                      const obj::ObjectiveConfig& cfg, const model::ForwardOptions& opt) {
  const model::PairOutput<T> out = model.forward(ex.reference, ex.target, opt);
  const auto& rv = ex.reference.valid;
  const auto& tv = ex.target.valid;
  const nn::Var<T> s = nn::softmax_over_rows(out.logits, &rv);
  const nn::Var<T> t = nn::softmax_over_cols(out.logits, &tv);
  const T eps = static_cast<T>(cfg.eps);

  auto forward_for = [&](const std::vector<int>& ref, const std::vector<int>& tgt) {
    auto [one_hot, targets] = label_targets<T>(ref, rv, tgt, tv);
    return obj::forward_loss(s, one_hot, targets, eps);
  };
  nn::Var<T> fwd;
  switch (mode) {
    case LossMode::Correspondence: fwd = forward_for(ex.reference_corr, ex.target_corr); break;
    case LossMode::Color: fwd = forward_for(ex.reference_color, ex.target_color); break;
    case LossMode::Both:
      fwd = nn::scale(nn::add(forward_for(ex.reference_corr, ex.target_corr),
                              forward_for(ex.reference_color, ex.target_color)),
                      T(0.5));
      break;
  }
  const nn::Var<T> cyc = obj::cycle_loss(s, t, &rv, eps);
  PairLoss<T> loss;
  loss.forward = fwd->value.data[0];
  loss.cycle = cyc->value.data[0];
  loss.total = cfg.alpha > 0.0 ? nn::axpy(fwd, static_cast<T>(cfg.alpha), cyc) : fwd;
  return loss;
}

template <class T>
TrainState<T>::TrainState(const model::ModelConfig& cfg, uint64_t seed) : model(cfg, seed), rng(seed ^ 0x5eedULL) {}

template <class T>
double gradient_norm(const model::Model<T>& model) {
  double sq = 0.0;
  for (const auto& p : model.parameters()) {
    for (T g : p.var->grad.data) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

template <class T>
double clip_gradients(model::Model<T>& model, double max_norm) {
  const double norm = gradient_norm(model);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : model.parameters()) {
      for (T& g : p.var->grad.data) g *= factor;
    }
  }
  return norm;
}

template <class T>
StepMetrics train_step(TrainState<T>& state, const std::vector<PairExample<T>>& batch, const TrainConfig& cfg) {
  require(!batch.empty(), ErrorCode::InvalidArgument, "empty batch");
  auto& params = state.model.parameters();
  state.model.zero_grad();
  const obj::ObjectiveConfig ocfg = cfg.objective();
  model::ForwardOptions opt;
  opt.dropout = cfg.dropout > 0.0;
  opt.rng = &state.rng;
  const T weight = T(1) / static_cast<T>(batch.size());

  StepMetrics m;
  m.step = state.step;
  m.lr = lr_schedule(state.step, cfg);
  std::vector<int> bad;
  for (size_t begin = 0; begin < batch.size(); begin += cfg.micro_batch) {
    const size_t end = std::min(batch.size(), begin + cfg.micro_batch);
    for (size_t i = begin; i < end; ++i) {
      const PairLoss<T> loss = pair_loss(state.model, batch[i], cfg.loss_mode, ocfg, opt);
      const double total = loss.total->value.data[0];
      if (!std::isfinite(total)) {
        bad.push_back(batch[i].id);
        continue;
      }
      m.fwd_loss += loss.forward / batch.size();
      m.cyc_loss += loss.cycle / batch.size();
      m.total_loss += total / batch.size();
      nn::backward(nn::scale(loss.total, weight));
    }
  }
  if (!bad.empty()) {
    state.model.zero_grad();
    std::string ids;
    for (int id : bad) ids += (ids.empty() ? "" : ",") + std::to_string(id);
    fail(ErrorCode::NonFiniteLoss, "non-finite loss for pairs " + ids);
  }
  m.grad_norm = clip_gradients(state.model, cfg.clip_norm);
  if (!std::isfinite(m.grad_norm)) {
    state.model.zero_grad();
    fail(ErrorCode::NonFiniteLoss, "non-finite gradient norm");
  }

  if (state.adam_m.size() != params.size()) {
    state.adam_m.assign(params.size(), {});
    state.adam_v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
      state.adam_m[i].assign(params[i].var->value.numel(), T(0));
      state.adam_v[i].assign(params[i].var->value.numel(), T(0));
    }
  }
  const double t = static_cast<double>(state.step + 1);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - m.lr * cfg.weight_decay;
  for (size_t i = 0; i < params.size(); ++i) {
    auto& value = params[i].var->value.data;
    const auto& grad = params[i].var->grad.data;
    auto& mo = state.adam_m[i];
    auto& ve = state.adam_v[i];
    for (size_t k = 0; k < value.size(); ++k) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
      const double mk = cfg.beta1 * mo[k] + (1.0 - cfg.beta1) * g;
      const double vk = cfg.beta2 * ve[k] + (1.0 - cfg.beta2) * g * g;
      mo[k] = static_cast<T>(mk);
      ve[k] = static_cast<T>(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + cfg.adam_eps);
      value[k] = static_cast<T>(value[k] * decay - m.lr * update);
    }
  }
  state.model.zero_grad();
  ++state.step;
  return m;
}

namespace {

// Bounded queue filled by one producer thread so the sample order is
// deterministic in the seed.
class PairQueue {
 public:
  PairQueue(const std::vector<dataset::Sequence>& data, const TrainConfig& cfg, int crop, int margin)
      : data_(data), cfg_(cfg), crop_(crop), margin_(margin), rng_(cfg.seed ^ 0xda7aULL) {
    worker_ = std::thread([this] { run(); });
  }
  ~PairQueue() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  PairExample<float> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    PairExample<float> ex = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return ex;
  }

 private:
  void run() {
    try {
      std::uniform_int_distribution<size_t> pick(0, data_.size() - 1);
      for (int id = 0;; ++id) {
        PairExample<float> ex;
        for (int attempt = 0;; ++attempt) {
          const dataset::Sequence& seq = data_[pick(rng_)];
          const int last = std::max(1, seq.holdout_start - 1);
          try {
            const LineImage& image = seq.sample.frames.front().image;
            const datagen::TrainingPair pair = datagen::sample_training_pair(
                seq.sample, cfg_.augment, seg::SegParams::for_resolution(image.width, image.height), rng_, 0, last);
            ex = make_example<float>(pair.reference, pair.target, crop_, margin_, id);
            break;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::DegenerateAugmentation || attempt > 100) throw;
          }
        }
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || static_cast<int>(queue_.size()) < cfg_.prefetch; });
        if (stop_) return;
        queue_.push_back(std::move(ex));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
    }
  }

  const std::vector<dataset::Sequence>& data_;
  TrainConfig cfg_;
  int crop_;
  int margin_;
  std::mt19937_64 rng_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<PairExample<float>> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

}  // namespace

FitResult fit(const std::vector<dataset::Sequence>& data, const TrainConfig& cfg, const model::ModelConfig& model_cfg,
              const FitOptions& options) {
  cfg.validate();
  require(!data.empty(), ErrorCode::InvalidArgument, "training needs at least one sequence");
  model::ModelConfig mc = model_cfg;
  mc.dropout = cfg.dropout;
  FitResult result{TrainState<float>(mc, cfg.seed), {}, -1.0};
  TrainState<float>& state = result.state;
  state.train_config = to_json(cfg);

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open(options.out_dir / "metrics.jsonl", std::ios::trunc);
  }
  auto emit = [&](const std::string& line) {
    result.log.push_back(line);
    if (log_file) log_file << line << '\n' << std::flush;
    if (options.on_log) options.on_log(line);
  };
  auto evaluate = [&]() {
    eval::HoldoutOptions ho;
    ho.horizon = cfg.eval_horizon;
    ho.stride = cfg.eval_stride;
    const model::Model<float>& net = state.model;
    return eval::evaluate_holdout(
        data, [&net](const std::vector<seg::SegmentedFrame>& f) { return eval::model_matcher(net, f); }, ho);
  };
  bool any_holdout = false;
  for (const auto& seq : data) any_holdout |= seq.holdout_start + cfg.eval_horizon < seq.sample.length();

  if (cfg.total_steps > 0) {
    PairQueue queue(data, cfg, mc.crop, seg::SegParams{}.crop_margin);
    int failures = 0;
    while (state.step < cfg.total_steps) {
      std::vector<PairExample<float>> batch;
      batch.reserve(cfg.batch_size());
      for (int i = 0; i < cfg.batch_size(); ++i) batch.push_back(queue.pop());
      StepMetrics m;
      try {
        m = train_step(state, batch, cfg);
        failures = 0;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteLoss || ++failures >= options.max_nonfinite) throw;
        continue;
      }
      json line{{"step", m.step}, {"lr", m.lr}, {"fwd_loss", m.fwd_loss}, {"cyc_loss", m.cyc_loss},
                {"grad_norm", m.grad_norm}};
      const bool last = state.step == cfg.total_steps;
      if (any_holdout && cfg.eval_interval > 0 && (state.step % cfg.eval_interval == 0 || last)) {
        const eval::MetricReport report = evaluate();
        line["eval_acc"] = report.accuracy;
        line["eval_miou"] = report.mean_iou;
        if (report.accuracy > result.best_accuracy) {
          result.best_accuracy = report.accuracy;
          if (!options.out_dir.empty()) save_checkpoint(state, options.out_dir / "best.ckpt");
        }
      }
      emit(line.dump());
    }
  }
  if (!options.out_dir.empty()) save_checkpoint(state, options.out_dir / "final.ckpt");
  return result;
}

#define ANT_TRAIN_INSTANTIATE(T)                                                                                 \
  template PairExample<T> make_example<T>(const datagen::LabeledFrame&, const datagen::LabeledFrame&, int, int,  \
                                          int);                                                                  \
  template PairExample<T> pad_example<T>(const PairExample<T>&, int, int);                                       \
  template PairLoss<T> pair_loss<T>(const model::Model<T>&, const PairExample<T>&, LossMode,                     \
                                    const obj::ObjectiveConfig&, const model::ForwardOptions&);                  \
  template struct TrainState<T>;                                                                                 \
  template double gradient_norm<T>(const model::Model<T>&);                                                      \
  template double clip_gradients<T>(model::Model<T>&, double);                                                   \
  template StepMetrics train_step<T>(TrainState<T>&, const std::vector<PairExample<T>>&, const TrainConfig&);

ANT_TRAIN_INSTANTIATE(float)
ANT_TRAIN_INSTANTIATE(double)

}  // namespace ant::train
