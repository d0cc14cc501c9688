#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hcrn/trainer.hpp"

using namespace hcrn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("hcrn_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// A small model over short videos so the tests stay quick.
SyntheticSpec small_spec(TaskKind task, std::size_t train = 32) {
  SyntheticSpec s;
  s.task = task;
  s.clips = 6;
  s.frames_per_clip = 6;
  s.min_duration = 4;
  s.count_hi = 3;
  s.train = train;
  s.val = 16;
  s.test = 16;
  if (task == TaskKind::kAction) {
    s.actions = 5;
    s.candidates = 3;
  }
  return s;
}

RunConfig small_run(const SyntheticSpec& spec, const fs::path& out) {
  RunConfig r;
  r.model.d = 16;
  r.embed_dim = 8;
  r.data = spec;
  r.out = out;
  r.epochs = 2;
  r.lr = 1e-3;
  return r;
}

ModelConfig model_for(const SyntheticSpec& spec, std::size_t d = 16) {
  RunConfig r;
  r.model.d = d;
  r.embed_dim = 8;
  Dataset data{spec, make_vocabulary(spec), {}};
  return model_config_for(r, data);
}

}  // namespace

TEST(Schedule, HalvesEveryTenEpochs) {
  for (std::size_t e = 1; e <= 10; ++e) EXPECT_EQ(scheduled_lr(1e-4, 0.5, 10, e), 1e-4);
  for (std::size_t e = 11; e <= 20; ++e) EXPECT_EQ(scheduled_lr(1e-4, 0.5, 10, e), 5e-5);
  for (std::size_t e = 21; e <= 25; ++e) EXPECT_EQ(scheduled_lr(1e-4, 0.5, 10, e), 2.5e-5);
  EXPECT_THROW(scheduled_lr(1e-4, 0.5, 10, 0), std::invalid_argument);
}

TEST(Adam, MatchesHandComputedSteps) {
  auto p = Tensor::vector({1.0, -2.0}, true);
  Adam opt({p});
  const double g[3][2] = {{0.5, -1.0}, {0.1, 2.0}, {-0.3, 0.0}};
  double w[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int s = 0; s < 3; ++s) {
    p.zero_grad();
    p.node()->accumulate_grad(g[s]);
    opt.step(0.01);
    for (int k = 0; k < 2; ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[s][k];
      v[k] = 0.999 * v[k] + 0.001 * g[s][k] * g[s][k];
      const double mh = m[k] / (1 - std::pow(0.9, s + 1)), vh = v[k] / (1 - std::pow(0.999, s + 1));
      w[k] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p[k], w[k], 1e-15);
    }
  }
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(Adam, FirstStepMovesEveryCoordinateByLr) {
  auto p = Tensor::vector({0.0, 0.0, 0.0}, true);
  Adam opt({p});
  const double g[3] = {1e-3, -50.0, 7.0};
  p.node()->accumulate_grad(g);
  opt.step(0.1);
  EXPECT_NEAR(p[0], -0.1, 1e-6);
  EXPECT_NEAR(p[1], 0.1, 1e-9);
  EXPECT_NEAR(p[2], -0.1, 1e-9);
}

TEST(ClipGradNorm, RescalesOnlyAboveThreshold) {
  auto a = Tensor::vector({0.0, 0.0}, true);
  auto b = Tensor::vector({0.0}, true);
  const double ga[2] = {3.0, 0.0}, gb[1] = {4.0};
  a.node()->accumulate_grad(ga);
  b.node()->accumulate_grad(gb);
  const Tensor params[] = {a, b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(a.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(RunConfig, ParsesKeysAndRejectsUnknown) {
  auto r = RunConfig::parse("d = 32\nk_max = 1\nvideo_motion = false\nlr = 0.002\ndata.task = count\ndata.train = 7\n");
  EXPECT_EQ(r.model.d, 32u);
  EXPECT_EQ(r.model.k_max.resolve(10), 1u);
  EXPECT_FALSE(r.model.video_motion);
  EXPECT_DOUBLE_EQ(r.lr, 0.002);
  EXPECT_EQ(r.data.task, TaskKind::kCount);
  EXPECT_EQ(r.data.train, 7u);
  EXPECT_EQ(r.epochs, 25u);
  EXPECT_EQ(r.batch_size, 16u);
  EXPECT_DOUBLE_EQ(r.clip_norm, 10.0);
  EXPECT_THROW(RunConfig::parse("learning_rate = 1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("data.colour = red\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("dataset = x\ndata.train = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr = -1\n"), std::invalid_argument);
}

TEST(ModelConfig, TextRoundTrip) {
  auto m = model_for(small_spec(TaskKind::kCount));
  m.hierarchy.gate_motion = true;
  m.hierarchy.k_max = KMaxPolicy::parse("n/2");
  auto back = ModelConfig::from_text(m.to_text());
  EXPECT_EQ(back.to_text(), m.to_text());
}

TEST(QaModel, HeadsProduceOnePredictionPerSample) {
  for (auto task : {TaskKind::kTransition, TaskKind::kCount, TaskKind::kFrameQa, TaskKind::kAction}) {
    auto spec = small_spec(task);
    auto data = generate_dataset(spec);
    QaModel model(model_for(spec), 3);
    std::vector<const SyntheticSample*> batch;
    for (std::size_t i = 0; i < 5; ++i) batch.push_back(&data.split("train")[i]);
    auto out = model.forward(batch, 1);
    EXPECT_EQ(out.predictions.size(), 5u) << task_name(task);
    EXPECT_TRUE(std::isfinite(out.loss.item()));
    EXPECT_EQ(out.loss.rank(), 0u);
  }
}

TEST(QaModel, BatchedMultiChoiceMatchesSingles) {
  auto spec = small_spec(TaskKind::kAction);
  auto data = generate_dataset(spec);
  QaModel model(model_for(spec), 3);
  const auto& s = data.split("train");
  std::vector<const SyntheticSample*> both{&s[0], &s[1]};
  auto joint = model.forward(both, 9);
  double separate = 0.0;
  for (const auto* x : both) {
    std::vector<const SyntheticSample*> one{x};
    separate += model.forward(one, 9).loss.item() / 2.0;
  }
  EXPECT_NEAR(joint.loss.item(), separate, 1e-12);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir("ckpt");
  fs::create_directories(dir.path);
  QaModel model(model_for(small_spec(TaskKind::kTransition)), 11);
  save_checkpoint(model, dir.path / "a.ckpt");
  auto back = load_checkpoint(dir.path / "a.ckpt");
  save_checkpoint(back, dir.path / "b.ckpt");
  EXPECT_TRUE(slurp(dir.path / "a.ckpt") == slurp(dir.path / "b.ckpt"));
  for (const auto& [name, t] : model.params().all()) {
    const auto& u = back.params().get(name);
    ASSERT_EQ(u.shape(), t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(u[i], t[i]) << name;
  }
}

TEST(Checkpoint, MismatchedArchitectureNamesTheTensor) {
  auto spec = small_spec(TaskKind::kTransition);
  QaModel small(model_for(spec, 16), 1), wide(model_for(spec, 32), 1);
  try {
    load_parameters(wide.params(), checkpoint_dump(small));
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("tensor '"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[16"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, AblatedModelRejectsExtraTensors) {
  auto spec = small_spec(TaskKind::kTransition);
  auto full_cfg = model_for(spec);
  auto ablated_cfg = full_cfg;
  ablated_cfg.hierarchy.video_motion = false;
  QaModel full(full_cfg, 1), ablated(ablated_cfg, 1);
  try {
    load_parameters(ablated.params(), checkpoint_dump(full));
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("no counterpart"), std::string::npos) << e.what();
  }
  // The other direction is a missing tensor.
  EXPECT_THROW(load_parameters(full.params(), checkpoint_dump(ablated)), CheckpointError);
}

TEST(Checkpoint, VersionTagIsChecked) {
  QaModel model(model_for(small_spec(TaskKind::kTransition)), 1);
  auto good = checkpoint_dump(model);
  TensorDump bad;
  bad.add_i64("__checkpoint_version__", {1}, {kCheckpointVersion + 1});
  for (const auto& e : good.entries()) {
    if (e.name == "__checkpoint_version__") continue;
    if (e.dtype == DType::kFloat64) bad.add_f64(e.name, e.extents, e.f64);
    else bad.add_text(e.name, good.text(e.name));
  }
  EXPECT_THROW(model_from_dump(bad), CheckpointError);
  EXPECT_THROW(model_from_dump(TensorDump{}), CheckpointError);
  EXPECT_NO_THROW(model_from_dump(good));
}

TEST(Evaluate, PerfectCountPredictorHasZeroMse) {
  auto spec = small_spec(TaskKind::kCount);
  auto data = generate_dataset(spec);
  const auto& s = data.split("train");
  std::vector<std::int64_t> truth;
  for (const auto& x : s) truth.push_back(x.question.answer);
  auto r = score_predictions(truth, s, spec.answer_space());
  EXPECT_EQ(r.mse, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  for (auto& t : truth) t += 1;
  EXPECT_EQ(score_predictions(truth, s, spec.answer_space()).mse, 1.0);
}

TEST(Evaluate, UniformRandomPredictorIsAtChance) {
  auto spec = small_spec(TaskKind::kTransition, 1000);
  spec.clips = 2;
  spec.frames_per_clip = 16;
  spec.min_duration = 2;
  spec.val = spec.test = 0;
  auto data = generate_dataset(spec);
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::int64_t> pick(0, 3);
  std::vector<std::int64_t> guesses;
  for (std::size_t i = 0; i < 1000; ++i) guesses.push_back(pick(rng));
  EXPECT_NEAR(score_predictions(guesses, data.split("train"), spec.answer_space()).accuracy, 0.25, 0.03);
}

TEST(Evaluate, RepeatedEvaluationIsIdentical) {
  auto spec = small_spec(TaskKind::kCount);
  auto data = generate_dataset(spec);
  QaModel model(model_for(spec), 5);
  auto a = evaluate(model, data.split("val"), 4, 7);
  auto b = evaluate(model, data.split("val"), 4, 7);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.predictions, b.predictions);
}

TEST(Train, ZeroEpochRunEmitsInitialValidationOnly) {
  TempDir dir("zero");
  auto run = small_run(small_spec(TaskKind::kCount), dir.path);
  run.epochs = 0;
  run.data.test = 0;
  auto result = train(run);
  auto records = read_metrics(result.metrics);
  ASSERT_FALSE(records.empty());
  for (const auto& r : records) {
    EXPECT_EQ(r.epoch, 0u);
    EXPECT_EQ(r.split, "val");
    EXPECT_EQ(r.task, "count");
  }
  EXPECT_EQ(records.size(), 3u);  // loss, accuracy, mse
  EXPECT_EQ(result.steps, 0u);
  EXPECT_TRUE(fs::exists(result.best_checkpoint));
}

TEST(Train, IdenticalSeedsGiveIdenticalMetricsAndCheckpoints) {
  TempDir a("det_a"), b("det_b");
  auto spec = small_spec(TaskKind::kTransition);
  auto ra = train(small_run(spec, a.path));
  auto rb = train(small_run(spec, b.path));
  auto ma = read_metrics(ra.metrics), mb = read_metrics(rb.metrics);
  ASSERT_EQ(ma.size(), mb.size());
  for (std::size_t i = 0; i < ma.size(); ++i) EXPECT_TRUE(ma[i].same_except_wallclock(mb[i])) << i;
  EXPECT_TRUE(slurp(a.path / "last.ckpt") == slurp(b.path / "last.ckpt"));

  TempDir c("det_c");
  auto other = small_run(spec, c.path);
  other.seed = 2;
  auto mc = read_metrics(train(other).metrics);
  bool differs = false;
  for (std::size_t i = 0; i < std::min(ma.size(), mc.size()); ++i) differs |= !ma[i].same_except_wallclock(mc[i]);
  EXPECT_TRUE(differs);
}

TEST(Train, MetricsStreamHasDocumentedFields) {
  TempDir dir("fields");
  auto result = train(small_run(small_spec(TaskKind::kFrameQa), dir.path));
  std::ifstream in(result.metrics);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    for (const char* key : {"\"epoch\"", "\"split\"", "\"task\"", "\"metric\"", "\"value\"", "\"wallclock\""}) {
      EXPECT_NE(line.find(key), std::string::npos) << line;
    }
    ++n;
  }
  EXPECT_GT(n, 0u);
  bool has_test = false;
  for (const auto& r : read_metrics(result.metrics)) has_test |= r.split == "test";
  EXPECT_TRUE(has_test);
}

TEST(Train, NonFiniteLossAborts) {
  TempDir dir("nan");
  auto spec = small_spec(TaskKind::kTransition);
  auto data = generate_dataset(spec);
  for (auto& s : data.splits["train"]) s.video.appearance.mutable_data()[0] = std::nan("");
  EXPECT_THROW(train(small_run(spec, dir.path), data), TrainingError);
}

TEST(Train, OverfitsThirtyTwoSamples) {
  TempDir dir("overfit");
  auto spec = small_spec(TaskKind::kTransition, 32);
  spec.clips = 8;
  spec.frames_per_clip = 16;
  spec.min_duration = 6;
  auto run = small_run(spec, dir.path);
  run.model.d = 64;
  run.embed_dim = 32;
  run.lr = 1e-3;
  run.epochs = 100;  // 2 steps per epoch: 200 steps
  run.lr_decay_every = 1000;
  auto data = generate_dataset(spec);
  auto result = train(run, data);
  EXPECT_EQ(result.steps, 200u);
  auto model = load_checkpoint(dir.path / "last.ckpt");
  EXPECT_GE(evaluate(model, data.split("train"), 16, run.eval_seed).accuracy, 0.99);
}
