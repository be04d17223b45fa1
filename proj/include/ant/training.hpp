#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ant/datagen.hpp"
#include "ant/dataset.hpp"
#include "ant/model.hpp"
#include "ant/objectives.hpp"

namespace ant::train {

enum class LossMode { Correspondence, Color, Both };
std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& name);

struct TrainConfig {
  double lr = 5e-4;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  long warmup_steps = 1000;
  long total_steps = 5000;
  int micro_batch = 16;
  int accumulation = 4;
  double dropout = 0.1;
  LossMode loss_mode = LossMode::Correspondence;
  double alpha = 0.25;
  double eps = 1e-9;
  long eval_interval = 500;
  int eval_horizon = 10;
  int eval_stride = 5;  // spacing of held-out chain starts
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int prefetch = 16;  // bounded queue of prepared pairs
  datagen::AugmentConfig augment;

  void validate() const;
  int batch_size() const { return micro_batch * accumulation; }
  obj::ObjectiveConfig objective() const { return {alpha, eps}; }
};

std::string to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; an optional "model" object is ignored here.
TrainConfig train_config_from_json(const std::string& text);

double lr_schedule(long step, const TrainConfig& cfg);

// One training pair prepared for the network.
template <class T>
struct PairExample {
  int id = 0;
  model::FrameInputs<T> reference;
  model::FrameInputs<T> target;
  std::vector<int> reference_corr, target_corr;
  std::vector<int> reference_color, target_color;
};

template <class T>
PairExample<T> make_example(const datagen::LabeledFrame& reference, const datagen::LabeledFrame& target, int crop,
                            int margin, int id);
// Appends masked ghost segments to both frames.
template <class T>
PairExample<T> pad_example(const PairExample<T>& ex, int extra_reference, int extra_target);

template <class T>
struct PairLoss {
  nn::Var<T> total;
  double forward = 0.0;
  double cycle = 0.0;
};

template <class T>
PairLoss<T> pair_loss(const model::Model<T>& model, const PairExample<T>& ex, LossMode mode,
                      const obj::ObjectiveConfig& cfg, const model::ForwardOptions& opt);

template <class T>
struct TrainState {
  model::Model<T> model;
  std::vector<std::vector<T>> adam_m;
  std::vector<std::vector<T>> adam_v;
  long step = 0;
  std::mt19937_64 rng;
  std::string train_config;  // JSON echo, informational

  TrainState(const model::ModelConfig& cfg, uint64_t seed);
};

struct StepMetrics {
  long step = 0;
  double lr = 0.0;
  double fwd_loss = 0.0;
  double cyc_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm = 0.0;  // before clipping
};

// Mean loss over the batch, processed in micro-batches of cfg.micro_batch
// whose gradients are accumulated. Clips to cfg.clip_norm and applies AdamW.
// Throws NonFiniteLoss (naming the pair ids) without touching the parameters.
template <class T>
StepMetrics train_step(TrainState<T>& state, const std::vector<PairExample<T>>& batch, const TrainConfig& cfg);

// Global L2 norm of the accumulated gradients.
template <class T>
double gradient_norm(const model::Model<T>& model);
// Scales gradients so their global norm is at most max_norm; returns the norm before scaling.
template <class T>
double clip_gradients(model::Model<T>& model, double max_norm);

struct FitOptions {
  std::filesystem::path out_dir;  // metrics.jsonl, best.ckpt, final.ckpt; empty = keep in memory
  std::function<void(const std::string& log_line)> on_log;
  int max_nonfinite = 3;
};

struct FitResult {
  TrainState<float> state;
  std::vector<std::string> log;
  double best_accuracy = -1.0;
};

FitResult fit(const std::vector<dataset::Sequence>& data, const TrainConfig& cfg, const model::ModelConfig& model_cfg,
              const FitOptions& options = {});

}  // namespace ant::train
