#include <cmath>
#include <random>

#include "ant/error.hpp"
#include "ant/training.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"

using namespace ant;
using namespace ant::train;
using ant::testing::random_inputs;
using ant::testing::tiny_config;

namespace {

PairExample<double> random_example(std::mt19937_64& rng, int m, int n, int id = 0) {
  PairExample<double> ex;
  ex.id = id;
  ex.reference = random_inputs<double>(m, 8, rng);
  ex.target = random_inputs<double>(n, 8, rng);
  for (int i = 0; i < m; ++i) {
    ex.reference_corr.push_back(i);
    ex.reference_color.push_back(i % 2);
  }
  for (int j = 0; j < n; ++j) {
    ex.target_corr.push_back(static_cast<int>(rng() % m));
    ex.target_color.push_back(ex.target_corr.back() % 2);
  }
  return ex;
}

std::vector<std::vector<double>> snapshot(const model::Model<double>& m) {
  std::vector<std::vector<double>> out;
  for (const auto& p : m.parameters()) out.push_back(p.var->value.data);
  return out;
}

std::vector<dataset::Sequence> tiny_dataset(int sequences, int frames) {
  std::vector<dataset::Sequence> data;
  for (int s = 0; s < sequences; ++s) {
    datagen::CharacterOptions o;
    o.resolution = 64;
    o.frames = frames;
    o.occluders = 0;
    o.limb_links = 1;
    o.buttons = 1;
    dataset::Sequence seq;
    seq.id = "s" + std::to_string(s);
    seq.sample = datagen::generate_sequence(datagen::character_scene(40 + s, o));
    seq.holdout_start = frames;
    data.push_back(std::move(seq));
  }
  return data;
}

TrainConfig tiny_train(long steps) {
  TrainConfig c;
  c.total_steps = steps;
  c.warmup_steps = std::max(1L, std::min(steps, 20L));
  c.micro_batch = 2;
  c.accumulation = 1;
  c.eval_interval = 0;
  c.lr = 2e-3;
  c.prefetch = 4;
  c.seed = 3;
  return c;
}

model::ModelConfig tiny_model() {
  model::ModelConfig m = tiny_config();
  m.dim = 16;
  m.crop = 16;
  m.conv_widths = {8, 16};
  return m;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.warmup_steps = 1000;
  c.lr = 5e-4;
  CHECK(lr_schedule(499, c) == doctest::Approx(2.5e-4).epsilon(1e-12));
  CHECK(lr_schedule(0, c) == doctest::Approx(5e-7).epsilon(1e-12));
  CHECK(lr_schedule(1000, c) == 5e-4);
  CHECK(lr_schedule(50000, c) == 5e-4);
  double previous = 0.0;
  for (long s = 0; s < 1500; ++s) {
    const double lr = lr_schedule(s, c);
    CHECK(lr >= previous);
    previous = lr;
  }
}

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.batch_size() == 64);
  TrainConfig bad = c;
  bad.warmup_steps = c.total_steps + 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.micro_batch = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  c.loss_mode = LossMode::Color;
  c.alpha = 0.5;
  c.augment.shear = 0.15;
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  const TrainConfig partial = train_config_from_json(R"({"total_steps": 10, "warmup_steps": 5, "model": {}})");
  CHECK(partial.total_steps == 10);
  CHECK(partial.lr == 5e-4);
  CHECK_THROWS_AS(train_config_from_json(R"({"loss_mode": "nope"})"), Error);
  CHECK(loss_mode_from_string("both") == LossMode::Both);
}

TEST_CASE("zero-gradient batch only applies weight decay") {
  // With one segment per frame both softmaxes are identically 1, so every
  // gradient is exactly zero.
  std::mt19937_64 rng(1);
  TrainState<double> state(tiny_config(), 1);
  const auto before = snapshot(state.model);
  TrainConfig cfg;
  cfg.micro_batch = 1;
  cfg.accumulation = 1;
  cfg.dropout = 0.0;
  const StepMetrics m = train_step(state, {random_example(rng, 1, 1)}, cfg);
  CHECK(m.grad_norm == 0.0);
  CHECK(m.fwd_loss == 0.0);
  const double decay = 1.0 - m.lr * cfg.weight_decay;
  const auto after = snapshot(state.model);
  for (size_t i = 0; i < before.size(); ++i) {
    for (size_t k = 0; k < before[i].size(); ++k) CHECK(after[i][k] == doctest::Approx(before[i][k] * decay).epsilon(1e-14));
  }
  CHECK(state.step == 1);
}

TEST_CASE("gradient clipping") {
  model::Model<double> m(tiny_config(), 2);
  std::mt19937_64 rng(2);
  double sq = 0.0;
  for (auto& p : m.parameters()) {
    p.var->grad = nn::Tensor<double>(p.var->value.shape);
    for (double& g : p.var->grad.data) {
      g = std::normal_distribution<double>()(rng);
      sq += g * g;
    }
  }
  const double factor = 10.0 / std::sqrt(sq);
  for (auto& p : m.parameters()) {
    for (double& g : p.var->grad.data) g *= factor;
  }
  CHECK(gradient_norm(m) == doctest::Approx(10.0));
  CHECK(clip_gradients(m, 1.0) == doctest::Approx(10.0));
  CHECK(std::abs(gradient_norm(m) - 1.0) < 1e-6);
  // below the threshold nothing changes
  CHECK(clip_gradients(m, 5.0) == doctest::Approx(1.0));
  CHECK(std::abs(gradient_norm(m) - 1.0) < 1e-6);
}

TEST_CASE("accumulating micro-batches equals one full batch") {
  std::mt19937_64 rng(3);
  std::vector<PairExample<double>> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_example(rng, 3 + i % 2, 4, i));
  TrainConfig a;
  a.dropout = 0.0;
  a.micro_batch = 4;
  a.accumulation = 1;
  TrainConfig b = a;
  b.micro_batch = 1;
  b.accumulation = 4;
  TrainState<double> sa(tiny_config(), 4), sb(tiny_config(), 4);
  const StepMetrics ma = train_step(sa, batch, a);
  const StepMetrics mb = train_step(sb, batch, b);
  CHECK(ma.grad_norm == doctest::Approx(mb.grad_norm).epsilon(1e-12));
  const auto pa = snapshot(sa.model), pb = snapshot(sb.model);
  for (size_t i = 0; i < pa.size(); ++i) {
    for (size_t k = 0; k < pa[i].size(); ++k) CHECK(std::abs(pa[i][k] - pb[i][k]) < 1e-12);
  }
}

TEST_CASE("padded ghost segments do not change the losses") {
  std::mt19937_64 rng(4);
  model::Model<double> m(tiny_config(), 4);
  const auto ex = random_example(rng, 4, 5);
  const auto padded = pad_example(ex, 2, 3);
  CHECK(padded.reference.size() == 6);
  CHECK(padded.target.valid_count() == 5);
  for (LossMode mode : {LossMode::Correspondence, LossMode::Color, LossMode::Both}) {
    nn::NoGradGuard guard;
    const auto a = pair_loss(m, ex, mode, {0.25, 1e-9}, {});
    const auto b = pair_loss(m, padded, mode, {0.25, 1e-9}, {});
    CHECK(std::abs(a.forward - b.forward) < 1e-6);
    CHECK(std::abs(a.cycle - b.cycle) < 1e-6);
    CHECK(std::abs(a.total->value.data[0] - b.total->value.data[0]) < 1e-6);
  }
}

TEST_CASE("non-finite loss aborts the step and names the pair") {
  std::mt19937_64 rng(5);
  TrainState<double> state(tiny_config(), 5);
  const auto before = snapshot(state.model);
  auto good = random_example(rng, 3, 3, 11);
  auto bad = random_example(rng, 3, 3, 42);
  bad.reference.crops.data[0] = std::nan("");
  TrainConfig cfg;
  cfg.micro_batch = 2;
  cfg.accumulation = 1;
  try {
    train_step(state, {good, bad}, cfg);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
    CHECK(std::string(e.what()).find("42") != std::string::npos);
  }
  CHECK(snapshot(state.model) == before);
  CHECK(state.step == 0);
}

TEST_CASE("fit with zero steps returns the initial model and an empty log") {
  const auto data = tiny_dataset(1, 4);
  const FitResult r = fit(data, tiny_train(0), tiny_model());
  CHECK(r.log.empty());
  CHECK(r.state.step == 0);
  const model::Model<float> fresh(tiny_model(), tiny_train(0).seed);
  CHECK(r.state.model.param("proj.w")->value.data == fresh.param("proj.w")->value.data);
}

TEST_CASE("fit is deterministic for a fixed seed") {
  const auto data = tiny_dataset(2, 6);
  TrainConfig cfg = tiny_train(100);
  cfg.augment.jitter_px = 2.0;
  const FitResult a = fit(data, cfg, tiny_model());
  const FitResult b = fit(data, cfg, tiny_model());
  REQUIRE(a.log.size() == 100);
  REQUIRE(b.log.size() == 100);
  for (size_t i = 0; i < a.log.size(); ++i) {
    const auto ja = nlohmann::json::parse(a.log[i]), jb = nlohmann::json::parse(b.log[i]);
    CHECK(std::abs(ja["fwd_loss"].get<double>() - jb["fwd_loss"].get<double>()) < 1e-6);
    CHECK(std::abs(ja["cyc_loss"].get<double>() - jb["cyc_loss"].get<double>()) < 1e-6);
  }
}

TEST_CASE("fit writes checkpoints, metrics and evaluation records") {
  const auto dir = testing::scratch_dir("fit_out");
  auto data = tiny_dataset(1, 16);
  data[0].holdout_start = 12;
  TrainConfig cfg = tiny_train(6);
  cfg.eval_interval = 3;
  cfg.eval_horizon = 3;
  FitOptions opt;
  opt.out_dir = dir;
  const FitResult r = fit(data, cfg, tiny_model(), opt);
  CHECK(std::filesystem::exists(dir / "metrics.jsonl"));
  CHECK(std::filesystem::exists(dir / "final.ckpt"));
  CHECK(std::filesystem::exists(dir / "best.ckpt"));
  int evals = 0;
  for (const auto& line : r.log) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "lr", "fwd_loss", "cyc_loss", "grad_norm"}) CHECK(j.contains(key));
    if (j.contains("eval_acc")) {
      ++evals;
      CHECK(j["eval_acc"].get<double>() >= 0.0);
      CHECK(j["eval_miou"].get<double>() <= 100.0);
    }
  }
  CHECK(evals == 2);
  CHECK(r.best_accuracy >= 0.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("colour mode keeps a positive cycle loss") {
  const auto data = tiny_dataset(1, 8);
  for (LossMode mode : {LossMode::Correspondence, LossMode::Color}) {
    TrainConfig cfg = tiny_train(20);
    cfg.loss_mode = mode;
    const FitResult r = fit(data, cfg, tiny_model());
    REQUIRE(r.log.size() == 20);
    if (mode == LossMode::Color) {
      for (const auto& line : r.log) CHECK(nlohmann::json::parse(line)["cyc_loss"].get<double>() > 0.0);
    }
  }
}

TEST_CASE("a single sequence can be memorised") {
  const auto data = tiny_dataset(1, 6);
  TrainConfig cfg = tiny_train(500);
  cfg.dropout = 0.0;
  cfg.augment = datagen::AugmentConfig::identity();
  cfg.augment.max_frame_skip = 2;
  const FitResult r = fit(data, cfg, tiny_model());
  double tail = 0.0;
  for (size_t i = r.log.size() - 50; i < r.log.size(); ++i) tail += nlohmann::json::parse(r.log[i])["fwd_loss"].get<double>();
  tail /= 50.0;
  INFO("mean forward loss over the last 50 steps " << tail);
  CHECK(tail < 0.05);
}
