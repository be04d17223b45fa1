#include <algorithm>
#include <cmath>
#include <numeric>

#include "ant/error.hpp"
#include "ant/model.hpp"
#include "ant/training.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace ant;
using namespace ant::model;
using ant::testing::random_inputs;
using ant::testing::tiny_config;

namespace {

double max_abs_diff(const nn::Tensor<double>& a, const nn::Tensor<double>& b) {
  double d = 0;
  for (size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

FrameInputs<double> permute_rows(const FrameInputs<double>& in, const std::vector<int>& perm) {
  FrameInputs<double> out = in;
  const int cw = in.crops.cols();
  for (size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(in.crops.data.begin() + static_cast<size_t>(perm[i]) * cw, cw, out.crops.data.begin() + i * cw);
    std::copy_n(in.positions.data.begin() + static_cast<size_t>(perm[i]) * 4, 4, out.positions.data.begin() + i * 4);
    out.valid[i] = in.valid[perm[i]];
  }
  return out;
}

void zero(const nn::Var<double>& v) { std::fill(v->value.data.begin(), v->value.data.end(), 0.0); }

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.dim = 10;
  c.heads = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ModelConfig{};
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ModelConfig{};
  c.layers = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(model_config_from_json(to_json(tiny_config())) == tiny_config());
}

TEST_CASE("block kinds alternate starting with self-attention") {
  CHECK(ModelConfig::is_self_block(0));
  CHECK_FALSE(ModelConfig::is_self_block(1));
  CHECK(ModelConfig::is_self_block(2));
}

TEST_CASE("encoder") {
  std::mt19937_64 rng(1);
  Model<double> m(tiny_config(), 3);
  nn::NoGradGuard guard;

  SUBCASE("identical inputs give identical rows") {
    FrameInputs<double> in = random_inputs<double>(3, 8, rng);
    std::copy_n(in.crops.data.begin(), in.crops.cols(), in.crops.data.begin() + 2 * in.crops.cols());
    std::copy_n(in.positions.data.begin(), 4, in.positions.data.begin() + 8);
    auto x = m.encode(in, {});
    for (int c = 0; c < 8; ++c) CHECK(x->value.at(0, c) == x->value.at(2, c));
  }
  SUBCASE("zero final layers give zero features") {
    zero(m.param("enc.squash.w"));
    zero(m.param("enc.squash.b"));
    zero(m.param("pos.fc1.w"));
    zero(m.param("pos.fc1.b"));
    auto x = m.encode(random_inputs<double>(4, 8, rng), {});
    for (double v : x->value.data) CHECK(v == 0.0);
  }
  SUBCASE("wrong crop size is rejected") {
    try {
      m.encode(random_inputs<double>(2, 6, rng), {});
      FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ShapeMismatch);
    }
  }
  SUBCASE("deterministic with dropout disabled") {
    auto in = random_inputs<double>(3, 8, rng);
    CHECK(m.encode(in, {})->value.data == m.encode(in, {})->value.data);
  }
}

TEST_CASE("encoder gradient of a linear probe matches finite differences") {
  std::mt19937_64 rng(2);
  Model<double> m(tiny_config(), 4);
  const auto in = random_inputs<double>(3, 8, rng);
  const std::vector<double> w = ant::testing::random_values<double>(8, rng);
  std::vector<std::pair<std::string, nn::Var<double>>> params;
  for (const auto& p : m.parameters()) {
    if (p.name.rfind("enc.", 0) == 0 || p.name.rfind("pos.", 0) == 0) params.push_back({p.name, p.var});
  }
  std::vector<double> weights(3 * 8, 0.0);
  std::copy(w.begin(), w.end(), weights.begin());  // w^T x_0
  const auto r = ant::testing::gradcheck(params, [&] { return ant::testing::probe(m.encode(in, {}), weights); });
  INFO(r.worst_name << " " << r.worst_relative);
  CHECK(r.worst_relative < 1e-3);
}

TEST_CASE("transformer width is checked") {
  Model<double> m(tiny_config(), 1);
  auto bad = nn::constant(nn::Tensor<double>({2, 6}));
  auto good = nn::constant(nn::Tensor<double>({2, 8}));
  CHECK_THROWS_AS(m.transform(bad, good, {}, {}, {}), Error);
}

TEST_CASE("zero layers reduce to the final projection") {
  ModelConfig c = tiny_config();
  c.layers = 0;
  Model<double> m(c, 5);
  std::mt19937_64 rng(5);
  auto xa = nn::constant(ant::testing::random_tensor<double>({3, 8}, rng));
  auto xb = nn::constant(ant::testing::random_tensor<double>({2, 8}, rng));
  nn::NoGradGuard guard;
  auto [fa, fb] = m.transform(xa, xb, {}, {}, {});
  auto w = m.param("proj.w")->value;
  auto b = m.param("proj.b")->value;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 8; ++j) {
      double ref = b.data[j];
      for (int k = 0; k < 8; ++k) ref += xa->value.at(i, k) * w.at(k, j);
      CHECK(fa->value.at(i, j) == doctest::Approx(ref).epsilon(1e-12));
    }
  }
}

TEST_CASE("single-segment self block matches a scalar oracle") {
  ModelConfig c = tiny_config();
  c.layers = 1;
  c.heads = 1;
  Model<double> m(c, 6);
  std::mt19937_64 rng(6);
  for (auto& p : m.parameters()) p.var->value.data = ant::testing::random_values<double>(p.var->value.numel(), rng);
  auto xa = nn::constant(ant::testing::random_tensor<double>({1, 8}, rng));
  auto xb = nn::constant(ant::testing::random_tensor<double>({1, 8}, rng));
  nn::NoGradGuard guard;
  auto [fa, fb] = m.transform(xa, xb, {}, {}, {});

  const int d = 8;
  auto P = [&](const std::string& n) { return m.param(n)->value; };
  auto lin = [&](const std::vector<double>& x, const std::string& pre) {
    const auto w = P(pre + ".w");
    const auto b = P(pre + ".b");
    std::vector<double> y(w.cols());
    for (int j = 0; j < w.cols(); ++j) {
      y[j] = b.data[j];
      for (int k = 0; k < w.rows(); ++k) y[j] += x[k] * w.at(k, j);
    }
    return y;
  };
  auto ln = [&](const std::vector<double>& x, const std::string& pre) {
    double mu = 0, var = 0;
    for (double v : x) mu += v / d;
    for (double v : x) var += (v - mu) * (v - mu) / d;
    std::vector<double> y(d);
    for (int k = 0; k < d; ++k) y[k] = (x[k] - mu) / std::sqrt(var + 1e-5) * P(pre + ".g").data[k] + P(pre + ".b").data[k];
    return y;
  };
  auto gelu = [](double x) { return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x))); };

  std::vector<double> x(xa->value.data.begin(), xa->value.data.end());
  const auto h = ln(x, "block0.ln1");
  const auto q = lin(h, "block0.q"), k = lin(h, "block0.k"), v = lin(h, "block0.v");
  double score = 0;
  for (int i = 0; i < d; ++i) score += q[i] * k[i];
  score /= std::sqrt(static_cast<double>(d));
  const double weight = std::exp(score - score);  // one key: softmax is exactly 1
  std::vector<double> attn(d);
  for (int i = 0; i < d; ++i) attn[i] = weight * v[i];
  const auto o = lin(attn, "block0.o");
  for (int i = 0; i < d; ++i) x[i] += o[i];
  auto hidden = lin(ln(x, "block0.ln2"), "block0.ff0");
  for (double& u : hidden) u = gelu(u);
  const auto ff = lin(hidden, "block0.ff1");
  for (int i = 0; i < d; ++i) x[i] += ff[i];
  const auto f = lin(x, "proj");
  for (int i = 0; i < d; ++i) CHECK(std::abs(fa->value.data[i] - f[i]) < 1e-6);
}

TEST_CASE("permutation equivariance of the match logits") {
  std::mt19937_64 rng(7);
  Model<double> m(tiny_config(), 7);
  const auto a = random_inputs<double>(5, 8, rng);
  const auto b = random_inputs<double>(4, 8, rng);
  nn::NoGradGuard guard;
  const auto base = m.forward(a, b, {});
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> pa(5), pb(4);
    std::iota(pa.begin(), pa.end(), 0);
    std::iota(pb.begin(), pb.end(), 0);
    std::shuffle(pa.begin(), pa.end(), rng);
    std::shuffle(pb.begin(), pb.end(), rng);
    const auto out = m.forward(permute_rows(a, pa), permute_rows(b, pb), {});
    double diff = 0;
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 4; ++j) {
        diff = std::max(diff, std::abs(out.logits->value.at(i, j) - base.logits->value.at(pa[i], pb[j])));
      }
    }
    CHECK(diff < 1e-9);
  }
  SUBCASE("permuting B leaves A's features unchanged") {
    std::vector<int> pb{3, 1, 0, 2};
    const auto out = m.forward(a, permute_rows(b, pb), {});
    CHECK(max_abs_diff(out.fa->value, base.fa->value) < 1e-9);
  }
}

TEST_CASE("attention maps") {
  ModelConfig c = tiny_config();
  c.heads = 4;
  Model<double> m(c, 8);
  std::mt19937_64 rng(8);
  const auto a = random_inputs<double>(3, 8, rng);
  const auto b = random_inputs<double>(5, 8, rng);
  const auto maps = attention_maps(m, a, b);
  REQUIRE(maps.size() == 16);
  int self3 = 0, self5 = 0, cross35 = 0, cross53 = 0;
  for (const auto& map : maps) {
    if (map.kind == AttentionKind::SelfA && map.rows == 3 && map.cols == 3) ++self3;
    if (map.kind == AttentionKind::SelfB && map.rows == 5 && map.cols == 5) ++self5;
    if (map.kind == AttentionKind::CrossAB && map.rows == 3 && map.cols == 5) ++cross35;
    if (map.kind == AttentionKind::CrossBA && map.rows == 5 && map.cols == 3) ++cross53;
    CHECK(map.layer == (map.kind == AttentionKind::SelfA || map.kind == AttentionKind::SelfB ? 0 : 1));
    for (int r = 0; r < map.rows; ++r) {
      double s = 0;
      for (int k = 0; k < map.cols; ++k) s += map.weights[r * map.cols + k];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  CHECK(self3 == 4);
  CHECK(self5 == 4);
  CHECK(cross35 == 4);
  CHECK(cross53 == 4);
}

TEST_CASE("identical keys give uniform attention") {
  ModelConfig c = tiny_config();
  c.layers = 1;
  Model<double> m(c, 9);
  std::mt19937_64 rng(9);
  auto a = random_inputs<double>(4, 8, rng);
  for (int i = 1; i < 4; ++i) {
    std::copy_n(a.crops.data.begin(), a.crops.cols(), a.crops.data.begin() + i * a.crops.cols());
    std::copy_n(a.positions.data.begin(), 4, a.positions.data.begin() + i * 4);
  }
  const auto maps = attention_maps(m, a, random_inputs<double>(2, 8, rng));
  for (const auto& map : maps) {
    if (map.kind != AttentionKind::SelfA) continue;
    for (double w : map.weights) CHECK(w == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("attention work scales with M^2 + N^2 for self and M*N for cross layers") {
  Model<double> m(tiny_config(), 10);
  std::mt19937_64 rng(10);
  for (auto [ma, nb] : {std::pair{3, 5}, std::pair{6, 2}, std::pair{7, 7}}) {
    nn::OpCounter counter;
    ForwardOptions opt;
    opt.counter = &counter;
    nn::NoGradGuard guard;
    m.forward(random_inputs<double>(ma, 8, rng), random_inputs<double>(nb, 8, rng), opt);
    CHECK(counter.self_scores == static_cast<long>(ma * ma + nb * nb) * 8);
    CHECK(counter.cross_scores == static_cast<long>(2 * ma * nb) * 8);
  }
}

TEST_CASE("padded rows do not change valid outputs") {
  Model<double> m(tiny_config(), 11);
  std::mt19937_64 rng(11);
  const auto a = random_inputs<double>(3, 8, rng);
  const auto b = random_inputs<double>(4, 8, rng);
  nn::NoGradGuard guard;
  const auto base = m.forward(a, b, {});
  const auto padded = m.forward(pad_inputs(a, 2), pad_inputs(b, 1), {});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) CHECK(std::abs(padded.logits->value.at(i, j) - base.logits->value.at(i, j)) < 1e-9);
  }
}

TEST_CASE("precision conversion copies values") {
  Model<double> d(tiny_config(), 12);
  Model<float> f(tiny_config(), 13);
  f.copy_values_from(d);
  CHECK(f.param("proj.w")->value.data[3] == static_cast<float>(d.param("proj.w")->value.data[3]));
}

TEST_CASE("full-model gradient of the total loss matches finite differences") {
  std::mt19937_64 rng(14);
  Model<double> m(tiny_config(), 14);
  train::PairExample<double> ex;
  ex.reference = random_inputs<double>(3, 8, rng);
  ex.target = random_inputs<double>(4, 8, rng);
  ex.reference_corr = {0, 1, 2};
  ex.target_corr = {2, 0, 1, 1};
  std::vector<std::pair<std::string, nn::Var<double>>> params;
  for (const auto& p : m.parameters()) params.push_back({p.name, p.var});
  const obj::ObjectiveConfig cfg{0.25, 1e-9};
  const auto r = ant::testing::gradcheck(
      params, [&] { return train::pair_loss(m, ex, train::LossMode::Correspondence, cfg, {}).total; });
  INFO(r.worst_name << " " << r.worst_relative << " over " << r.checked);
  CHECK(r.worst_relative < 1e-3);
}
