#pragma once

// Question-answering model, optimizer, checkpoints and the training loop.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcrn/decoders.hpp"
#include "hcrn/hcrn_model.hpp"
#include "hcrn/kv_config.hpp"
#include "hcrn/synthetic.hpp"
#include "hcrn/tensor_dump.hpp"

namespace hcrn {

// Everything needed to rebuild a model's parameter layout.
struct ModelConfig {
  HierarchyConfig hierarchy;
  std::size_t vocab = 0;
  std::size_t embed_dim = 32;
  AnswerSpace answers;

  void validate() const;
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

struct BatchResult {
  Tensor loss;
  // Predicted label, rounded count, or chosen candidate per sample.
  std::vector<std::int64_t> predictions;
  // Unrounded count outputs (count head only).
  std::vector<double> raw;
};

class QaModel {
 public:
  QaModel(ModelConfig cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Loss and predictions for a minibatch; all subset plans derive from plan_seed.
  BatchResult forward(std::span<const SyntheticSample* const> batch, std::uint64_t plan_seed) const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  HcrnParams hcrn_;
  std::optional<OpenEndedHead> openended_;
  std::optional<CountHead> count_;
  std::optional<MultiChoiceHead> multichoice_;
};

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::int64_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

TensorDump checkpoint_dump(const QaModel& model);
void save_checkpoint(const QaModel& model, const std::filesystem::path& path);
QaModel load_checkpoint(const std::filesystem::path& path);
QaModel model_from_dump(const TensorDump& dump);
// Copies every parameter from `dump`. Missing tensors, shape mismatches and
// tensors the store does not know are errors naming the tensor.
void load_parameters(ParamStore& store, const TensorDump& dump);

// ---- optimization ----------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
// p <- p - lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected m_hat, v_hat.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg = {});
  void step(double lr);
  std::size_t steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

// Global L2 norm of all gradients before clipping; rescales them when it exceeds max_norm.
double clip_grad_norm(std::span<const Tensor> params, double max_norm);

// Step decay for 1-based epochs: lr0 * decay^floor((epoch - 1) / every).
double scheduled_lr(double lr0, double decay, std::size_t every, std::size_t epoch);

// ---- metrics ---------------------------------------------------------------

struct MetricRecord {
  std::size_t epoch = 0;
  std::string split;
  std::string task;
  std::string metric;
  double value = 0.0;
  double wallclock = 0.0;  // seconds since the run started

  bool same_except_wallclock(const MetricRecord& o) const;
};

// Append-only JSON-lines stream.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void write(const MetricRecord& record);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path);

// ---- evaluation ------------------------------------------------------------

struct EvalResult {
  std::size_t samples = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // exact-match rate (rounded counts for count)
  double mse = 0.0;       // count only, on rounded predictions
  std::vector<std::int64_t> predictions;
};

// Accuracy and (for counts) MSE of given predictions; loss is left at 0.
EvalResult score_predictions(std::vector<std::int64_t> predictions, const std::vector<SyntheticSample>& samples,
                             const AnswerSpace& answers);

// Batches in dataset order; the plan for batch b derives from (eval_seed, b).
EvalResult evaluate(const QaModel& model, const std::vector<SyntheticSample>& samples, std::size_t batch_size,
                    std::uint64_t eval_seed);

// ---- runs ------------------------------------------------------------------

struct RunConfig {
  HierarchyConfig model;  // clips, frames_per_clip and d_in come from the data
  std::size_t embed_dim = 32;

  std::optional<std::filesystem::path> dataset;  // load from disk, else generate from `data`
  SyntheticSpec data;

  double lr = 1e-4;
  double lr_decay = 0.5;
  std::size_t lr_decay_every = 10;
  std::size_t epochs = 25;
  std::size_t batch_size = 16;
  double clip_norm = 10.0;
  AdamConfig adam;
  std::uint64_t seed = 1;
  std::uint64_t eval_seed = 7;
  std::filesystem::path out = "run";

  void validate() const;
  // Keys: see README. "data.<key>" entries form the synthetic spec.
  static RunConfig from_config(KeyValueConfig& cfg);
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  std::size_t best_epoch = 0;
  EvalResult best_val;
  EvalResult test;
  std::size_t steps = 0;
  std::size_t clipped_steps = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics;
};

ModelConfig model_config_for(const RunConfig& run, const Dataset& data);

// Writes <out>/metrics.jsonl, <out>/best.ckpt, <out>/last.ckpt and <out>/config.txt.
// `log` receives one human-readable line per epoch.
TrainResult train(const RunConfig& run, const Dataset& data,
                  const std::function<void(const std::string&)>& log = {});
TrainResult train(const RunConfig& run, const std::function<void(const std::string&)>& log = {});

// The metric used to pick checkpoints: accuracy, or -MSE for counts.
double selection_score(const EvalResult& r, const AnswerSpace& answers);

}  // namespace hcrn
