#include <gtest/gtest.h>

#include <cmath>

#include "hcrn/gradcheck.hpp"
#include "hcrn/hcrn_model.hpp"
#include "hcrn/ops.hpp"
#include "scalar_oracle.hpp"
#include "test_util.hpp"

namespace hcrn {
namespace {

using testing::random_tensor;
using testing::values;
using Structure = HierarchyConfig::Structure;

HierarchyConfig small_config(std::size_t n, std::size_t t, std::size_t d) {
  HierarchyConfig cfg;
  cfg.clips = n;
  cfg.frames_per_clip = t;
  cfg.d = d;
  cfg.d_in = 3;
  return cfg;
}

struct Fixture {
  explicit Fixture(const HierarchyConfig& c, std::uint64_t seed = 1) : cfg(c), rng(seed) {
    params = make_hcrn_params(store, cfg, 6, 4, rng);
  }
  VideoFeatures video() {
    return {random_tensor({cfg.clips, cfg.frames_per_clip, cfg.d_in}, rng),
            random_tensor({cfg.clips, cfg.d_in}, rng)};
  }
  HierarchyConfig cfg;
  std::mt19937_64 rng;
  ParamStore store;
  HcrnParams params;
};

ObjectArray random_objects(std::size_t n, const Shape& shape, std::mt19937_64& rng) {
  ObjectArray out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor(shape, rng));
  return out;
}

TEST(ShapeLaws, GridOfClipAndFrameCounts) {
  const std::size_t grid[] = {5, 6, 8, 16};
  for (auto n : grid) {
    for (auto t : grid) {
      auto cfg = small_config(n, t, 2);
      EXPECT_EQ(crn_output_length(t, cfg.k_max), std::max<std::size_t>(t - 2, 1));
      EXPECT_EQ(cfg.clip_output_length(), t - 4);
      EXPECT_EQ(cfg.video_output_length(), n - 4);
      Fixture fx(cfg, n * 31 + t);
      UnitPlanner planner(7, cfg.t, cfg.k_max);
      auto frames = random_objects(t, {2}, fx.rng);
      auto f = random_tensor({2}, fx.rng), q = random_tensor({2}, fx.rng);
      auto clip = clip_stack(frames, f, q, fx.params.clip, cfg, planner);
      EXPECT_EQ(clip.shape(), (Shape{t - 4, 2})) << n << "x" << t;
      auto clips = random_objects(n, {t - 4, 2}, fx.rng);
      auto video = video_stack(clips, f, q, fx.params.video, cfg, planner);
      ASSERT_EQ(video.size(), n - 4);
      for (const auto& o : video) EXPECT_EQ(o.shape(), (Shape{t - 4, 2}));
      auto out = forward_2level(fx.video(), {1, 2}, fx.params, cfg, 3);
      EXPECT_EQ(out.pooled.attention.shape(), (Shape{(n - 4) * (t - 4)}));
    }
  }
}

TEST(ShapeLaws, ClipStackExamples) {
  for (std::size_t t : {16u, 5u}) {
    auto cfg = small_config(5, t, 4);
    Fixture fx(cfg);
    UnitPlanner planner(0, cfg.t, cfg.k_max);
    auto out = clip_stack(random_objects(t, {4}, fx.rng), random_tensor({4}, fx.rng), random_tensor({4}, fx.rng),
                          fx.params.clip, cfg, planner);
    EXPECT_EQ(out.shape(), (Shape{t - 4, 4}));
  }
  auto cfg = small_config(5, 5, 4);
  Fixture fx(cfg);
  UnitPlanner planner(0, cfg.t, cfg.k_max);
  EXPECT_THROW(clip_stack(random_objects(4, {4}, fx.rng), random_tensor({4}, fx.rng), random_tensor({4}, fx.rng),
                          fx.params.clip, cfg, planner),
               std::invalid_argument);
}

TEST(ShapeLaws, VideoStackExamples) {
  auto cfg = small_config(8, 16, 4);
  Fixture fx(cfg);
  UnitPlanner planner(0, cfg.t, cfg.k_max);
  auto out = video_stack(random_objects(8, {12, 4}, fx.rng), random_tensor({4}, fx.rng), random_tensor({4}, fx.rng),
                         fx.params.video, cfg, planner);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].shape(), (Shape{12, 4}));

  auto cfg5 = small_config(5, 16, 4);
  Fixture fx5(cfg5);
  auto one = video_stack(random_objects(5, {12, 4}, fx5.rng), random_tensor({4}, fx5.rng),
                         random_tensor({4}, fx5.rng), fx5.params.video, cfg5, planner);
  EXPECT_EQ(one.size(), 1u);
  EXPECT_THROW(video_stack(random_objects(4, {12, 4}, fx5.rng), random_tensor({4}, fx5.rng),
                           random_tensor({4}, fx5.rng), fx5.params.video, cfg5, planner),
               std::invalid_argument);
}

TEST(ShapeLaws, TwoLevelDeskScale) {
  auto cfg = small_config(8, 16, 64);
  cfg.d_in = 32;
  Fixture fx(cfg);
  auto out = forward_2level(fx.video(), {1, 2, 3}, fx.params, cfg, 5);
  EXPECT_EQ(out.pooled.pooled.shape(), (Shape{64}));
  EXPECT_EQ(out.pooled.attention.shape(), (Shape{48}));
  EXPECT_EQ(cfg.pooled_rows(), 48u);
}

TEST(ShapeLaws, ThreeLevelTwentyFourClipsFourGroups) {
  auto cfg = small_config(24, 16, 4);
  cfg.structure = Structure::kThreeLevel;
  cfg.groups = 4;
  EXPECT_EQ(cfg.clips_per_group(), 6u);
  EXPECT_EQ(cfg.subvideo_output_length(), 2u);
  // Four sub-videos shrink by the length law to 2 and then 1.
  EXPECT_EQ(cfg.video_output_length(), 1u);
  Fixture fx(cfg);
  auto out = forward_3level(fx.video(), {1}, fx.params, cfg, 2);
  EXPECT_EQ(out.pooled.rows.shape(), (Shape{1 * 2 * 12, 4}));
  // Plans: clip (16, 14), sub-video (6, 4), video (4, 2).
  ASSERT_EQ(out.plans.size(), 6u);
  const std::size_t ns[] = {16, 14, 6, 4, 4, 2};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out.plans[i].n, ns[i]);
}

TEST(ShapeLaws, ThreeLevelMinimal) {
  auto cfg = small_config(25, 5, 2);
  cfg.structure = Structure::kThreeLevel;
  cfg.groups = 5;
  EXPECT_EQ(cfg.video_output_length(), 1u);
  EXPECT_EQ(cfg.pooled_rows(), 1u);
  Fixture fx(cfg);
  auto out = forward_3level(fx.video(), {0, 5}, fx.params, cfg, 2);
  EXPECT_EQ(out.pooled.attention.shape(), (Shape{1}));
  EXPECT_DOUBLE_EQ(out.pooled.attention[0], 1.0);
}

TEST(ShapeLaws, AblationVariants) {
  struct Case {
    std::function<void(HierarchyConfig&)> edit;
    std::size_t rows;
  };
  const Case cases[] = {
      {[](HierarchyConfig&) {}, 4 * 12},
      {[](HierarchyConfig& c) { c.structure = Structure::kOneLevel; }, 4},
      {[](HierarchyConfig& c) { c.structure = Structure::kOneHalfLevel; }, 12},
      {[](HierarchyConfig& c) { c.k_max = KMaxPolicy{KMaxPolicy::Kind::kFixed, 1}; }, 1},
      {[](HierarchyConfig& c) { c.clip_motion = false; }, 4 * 14},
      {[](HierarchyConfig& c) { c.video_motion = false; }, 6 * 12},
      {[](HierarchyConfig& c) { c.clip_motion = c.video_motion = false; }, 6 * 14},
      {[](HierarchyConfig& c) { c.clip_question = c.video_question = false; }, 6 * 14},
      {[](HierarchyConfig& c) { c.gate_question = false; c.gate_motion = true; }, 4 * 12},
  };
  for (const auto& c : cases) {
    auto cfg = small_config(8, 16, 4);
    c.edit(cfg);
    EXPECT_EQ(cfg.pooled_rows(), c.rows);
    Fixture fx(cfg);
    auto out = hcrn_forward(fx.params, cfg, random_tensor({2, 8, 16, 3}, fx.rng), random_tensor({2, 8, 3}, fx.rng),
                            {{1}, {2, 3}}, 4);
    EXPECT_EQ(out.pooled.attention.shape(), (Shape{2, c.rows}));
    EXPECT_EQ(out.pooled.pooled.shape(), (Shape{2, 4}));
  }
}

TEST(Config, Validation) {
  auto cfg = small_config(8, 4, 4);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config(4, 8, 4);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config(8, 8, 3);
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config(24, 16, 4);
  cfg.structure = Structure::kThreeLevel;
  cfg.groups = 5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.groups = 24;  // Q = 1
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.groups = 12;  // Q = 2
  EXPECT_NO_THROW(cfg.validate());
  cfg.groups = 4;
  EXPECT_NO_THROW(cfg.validate());
  cfg = small_config(8, 3, 4);
  cfg.structure = Structure::kOneLevel;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(HierarchyConfig::parse_structure("1.5-level"), Structure::kOneHalfLevel);
  EXPECT_THROW(HierarchyConfig::parse_structure("4-level"), std::invalid_argument);
}

class Attention : public ::testing::Test {
 protected:
  void SetUp() override { p = make_attention_params(store, "attn", 2, rng); }
  std::mt19937_64 rng{5};
  ParamStore store;
  AttentionParams p;
};

TEST_F(Attention, SingleRowIsPassedThrough) {
  auto o = random_tensor({1, 2}, rng);
  auto out = attention_pool({o}, random_tensor({2}, rng), p);
  EXPECT_EQ(values(out.attention), (std::vector<double>{1.0}));
  EXPECT_EQ(values(out.pooled), values(o));
}

TEST_F(Attention, IdenticalRowsGiveThatRow) {
  auto row = random_tensor({2}, rng);
  auto out = attention_pool({row, row, row}, random_tensor({2}, rng), p);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.pooled[j], row[j], 1e-15);
}

TEST_F(Attention, MatchesScalarOracle) {
  ObjectArray objects = random_objects(3, {2}, rng);
  auto q = random_tensor({2}, rng);
  auto out = attention_pool(objects, q, p);
  oracle::Rows rows;
  for (const auto& o : objects) rows.push_back(values(o));
  auto want = oracle::attention(rows, values(q), p);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.pooled[j], want.pooled[j], 1e-14);
  double total = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_NEAR(out.attention[r], want.gamma[r], 1e-14);
    total += out.attention[r];
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST_F(Attention, RowsFollowObjectThenPositionOrder) {
  auto a = random_tensor({2, 2}, rng), b = random_tensor({2, 2}, rng);
  auto out = attention_pool({a, b}, random_tensor({2}, rng), p);
  auto rows = values(out.rows);
  auto want = values(a);
  auto vb = values(b);
  want.insert(want.end(), vb.begin(), vb.end());
  EXPECT_EQ(rows, want);
}

TEST_F(Attention, EmptyRejected) { EXPECT_THROW(attention_pool({}, random_tensor({2}, rng), p), std::invalid_argument); }

TEST(ComposedOracle, TwoLevelMicroModelMatchesScalarReference) {
  auto cfg = small_config(6, 6, 2);
  cfg.t = 100;  // exhaustive plans make the forward seed irrelevant
  Fixture fx(cfg, 17);
  auto video = fx.video();
  QuestionTokens tokens{3, 1, 4};
  auto out = forward_2level(video, tokens, fx.params, cfg, 9);

  std::vector<std::vector<oracle::Vec>> app(6, std::vector<oracle::Vec>(6));
  std::vector<oracle::Vec> mot(6);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 6; ++j) {
      for (std::size_t k = 0; k < 3; ++k) app[i][j].push_back(video.appearance[(i * 6 + j) * 3 + k]);
    }
    for (std::size_t k = 0; k < 3; ++k) mot[i].push_back(video.clip_motion[i * 3 + k]);
  }
  auto want = oracle::two_level(app, mot, tokens, fx.params, cfg);
  ASSERT_EQ(out.pooled.attention.numel(), want.gamma.size());
  for (std::size_t r = 0; r < want.gamma.size(); ++r) EXPECT_NEAR(out.pooled.attention[r], want.gamma[r], 1e-12);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(out.pooled.pooled[j], want.pooled[j], 1e-12);
}

TEST(Batching, BatchRowsMatchSingleSampleForwards) {
  auto cfg = small_config(6, 7, 4);
  for (auto s : {Structure::kTwoLevel, Structure::kOneLevel, Structure::kOneHalfLevel}) {
    cfg.structure = s;
    Fixture fx(cfg, 3);
    auto app = random_tensor({3, 6, 7, 3}, fx.rng);
    auto mot = random_tensor({3, 6, 3}, fx.rng);
    std::vector<QuestionTokens> qs{{1, 2}, {5}, {0, 3, 3}};
    auto batched = hcrn_forward(fx.params, cfg, app, mot, qs, 21);
    for (std::size_t b = 0; b < 3; ++b) {
      auto one = hcrn_forward(fx.params, cfg, ops::slice(app, 0, b, b + 1), ops::slice(mot, 0, b, b + 1), {qs[b]}, 21);
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(batched.pooled.pooled[b * 4 + j], one.pooled.pooled[j], 1e-13)
            << HierarchyConfig::structure_name(s);
      }
    }
  }
}

TEST(Batching, ThreeLevelBatchRowsMatchSingleSampleForwards) {
  auto cfg = small_config(10, 5, 2);
  cfg.structure = Structure::kThreeLevel;
  cfg.groups = 2;
  Fixture fx(cfg, 4);
  auto app = random_tensor({2, 10, 5, 3}, fx.rng);
  auto mot = random_tensor({2, 10, 3}, fx.rng);
  std::vector<QuestionTokens> qs{{1, 2}, {4}};
  auto batched = hcrn_forward(fx.params, cfg, app, mot, qs, 8);
  for (std::size_t b = 0; b < 2; ++b) {
    auto one = hcrn_forward(fx.params, cfg, ops::slice(app, 0, b, b + 1), ops::slice(mot, 0, b, b + 1), {qs[b]}, 8);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(batched.pooled.pooled[b * 2 + j], one.pooled.pooled[j], 1e-13);
  }
}

TEST(Properties, ClosedQuestionGatesSilenceOutput) {
  auto cfg = small_config(6, 6, 4);
  Fixture fx(cfg);
  for (auto& [k, gate] : fx.params.video.question->gate) {
    auto w = gate.weight.mutable_data();
    std::fill(w.begin(), w.end(), 0.0);
    auto b = gate.bias.mutable_data();
    std::fill(b.begin(), b.end(), -1e3);
  }
  auto out = forward_2level(fx.video(), {1, 2}, fx.params, cfg, 0);
  for (auto v : out.pooled.pooled.data()) EXPECT_NEAR(v, 0.0, 1e-300);
}

TEST(Properties, WithoutQuestionUnitsRowsIgnoreTheQuestion) {
  auto cfg = small_config(6, 6, 4);
  cfg.clip_question = cfg.video_question = false;
  Fixture fx(cfg);
  auto video = fx.video();
  auto a = forward_2level(video, {1, 2}, fx.params, cfg, 0);
  auto b = forward_2level(video, {4, 0, 3}, fx.params, cfg, 0);
  EXPECT_EQ(values(a.pooled.rows), values(b.pooled.rows));
  EXPECT_NE(values(a.pooled.attention), values(b.pooled.attention));
}

TEST(Properties, ClipOrderMatters) {
  auto cfg = small_config(6, 6, 4);
  Fixture fx(cfg);
  auto video = fx.video();
  std::vector<std::size_t> order{1, 0, 2, 3, 4, 5};
  std::vector<double> app, mot;
  for (auto i : order) {
    auto a = ops::slice(video.appearance, 0, i, i + 1).data();
    app.insert(app.end(), a.begin(), a.end());
    auto m = ops::slice(video.clip_motion, 0, i, i + 1).data();
    mot.insert(mot.end(), m.begin(), m.end());
  }
  VideoFeatures swapped{Tensor::from(video.appearance.shape(), app), Tensor::from(video.clip_motion.shape(), mot)};
  auto a = forward_2level(video, {2}, fx.params, cfg, 0);
  auto b = forward_2level(swapped, {2}, fx.params, cfg, 0);
  double diff = 0.0;
  for (std::size_t j = 0; j < 4; ++j) diff += std::abs(a.pooled.pooled[j] - b.pooled.pooled[j]);
  EXPECT_GT(diff, 1e-9);
}

TEST(Properties, PlansFollowTheForwardSeed) {
  auto cfg = small_config(8, 9, 2);
  Fixture fx(cfg);
  auto video = fx.video();
  auto a = forward_2level(video, {1}, fx.params, cfg, 77);
  auto b = forward_2level(video, {1}, fx.params, cfg, 77);
  auto c = forward_2level(video, {1}, fx.params, cfg, 78);
  EXPECT_EQ(a.plans, b.plans);
  EXPECT_EQ(values(a.pooled.pooled), values(b.pooled.pooled));
  EXPECT_NE(a.plans, c.plans);
}

TEST(Properties, MismatchedInputsRejected) {
  auto cfg = small_config(6, 6, 4);
  Fixture fx(cfg);
  EXPECT_THROW(hcrn_forward(fx.params, cfg, random_tensor({1, 6, 5, 3}, fx.rng), random_tensor({1, 6, 3}, fx.rng),
                            {{1}}, 0),
               ShapeError);
  EXPECT_THROW(hcrn_forward(fx.params, cfg, random_tensor({2, 6, 6, 3}, fx.rng), random_tensor({2, 6, 3}, fx.rng),
                            {{1}}, 0),
               ShapeError);
  EXPECT_THROW(forward_3level(fx.video(), {1}, fx.params, cfg, 0), std::invalid_argument);
}

TEST(Gradients, TwoLevelMicroModelPassesFiniteDifference) {
  auto cfg = small_config(5, 5, 4);
  Fixture fx(cfg, 23);
  auto app = random_tensor({2, 5, 5, 3}, fx.rng);
  auto mot = random_tensor({2, 5, 3}, fx.rng);
  auto probe = random_tensor({2, 4}, fx.rng);
  std::vector<QuestionTokens> qs{{1, 2}, {3}};
  auto loss_fn = [&] {
    auto out = hcrn_forward(fx.params, cfg, app, mot, qs, 5);
    return ops::sum(ops::hadamard(out.pooled.pooled, probe));
  };
  auto params = fx.store.tensors();
  auto report = finite_diff_check(loss_fn, params);
  EXPECT_LT(report.max_relative_error, 1e-4)
      << "param " << report.worst_param << " element " << report.worst_element;
  // A single pooled row makes attention weights constant, so attn.* is exempt here.
  std::size_t idx = 0;
  for (const auto& [name, p] : fx.store.all()) {
    double norm = 0.0;
    for (auto g : params[idx++].grad()) norm += std::abs(g);
    if (name.rfind("attn.", 0) != 0) EXPECT_GT(norm, 0.0) << name;
  }
}

TEST(Gradients, AttentionReceivesGradientWithSeveralRows) {
  auto cfg = small_config(6, 6, 4);
  Fixture fx(cfg, 31);
  auto app = random_tensor({1, 6, 6, 3}, fx.rng);
  auto mot = random_tensor({1, 6, 3}, fx.rng);
  auto probe = random_tensor({1, 4}, fx.rng);
  auto loss_fn = [&] {
    auto out = hcrn_forward(fx.params, cfg, app, mot, {{4, 1}}, 5);
    return ops::sum(ops::hadamard(out.pooled.pooled, probe));
  };
  std::vector<Tensor> attn;
  std::vector<std::string> names;
  for (const auto& [name, p] : fx.store.all()) {
    if (name.rfind("attn.", 0) == 0) {
      attn.push_back(p);
      names.push_back(name);
    }
  }
  EXPECT_LT(finite_diff_check(loss_fn, attn).max_relative_error, 1e-4);
  for (std::size_t i = 0; i < attn.size(); ++i) {
    double norm = 0.0;
    for (auto g : attn[i].grad()) norm += std::abs(g);
    // Softmax is shift invariant, so the score bias never moves the output.
    if (names[i] == "attn.score.bias") {
      EXPECT_NEAR(norm, 0.0, 1e-12);
    } else {
      EXPECT_GT(norm, 0.0) << names[i];
    }
  }
}

TEST(Gradients, ThreeLevelPassesFiniteDifference) {
  auto cfg = small_config(10, 5, 2);
  cfg.structure = Structure::kThreeLevel;
  cfg.groups = 2;
  Fixture fx(cfg, 29);
  auto app = random_tensor({1, 10, 5, 3}, fx.rng);
  auto mot = random_tensor({1, 10, 3}, fx.rng);
  auto loss_fn = [&] {
    auto out = hcrn_forward(fx.params, cfg, app, mot, {{2, 1}}, 5);
    auto p = out.pooled.pooled;
    return ops::sum(ops::hadamard(p, p));
  };
  auto params = fx.store.tensors();
  EXPECT_LT(finite_diff_check(loss_fn, params).max_relative_error, 1e-4);
}

}  // namespace
}  // namespace hcrn
