#include "hcrn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "hcrn/ops.hpp"
#include "hcrn/sampler.hpp"

namespace hcrn {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;
constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kPlanStream = 0x706c616e;

const char* bool_text(bool b) { return b ? "true" : "false"; }

void read_hierarchy_knobs(KeyValueConfig& cfg, HierarchyConfig& h) {
  h.structure = HierarchyConfig::parse_structure(
      cfg.take_string("structure", HierarchyConfig::structure_name(h.structure)));
  h.groups = cfg.take_size("groups", h.groups);
  h.d = cfg.take_size("d", h.d);
  h.t = cfg.take_size("t", h.t);
  h.k_max = KMaxPolicy::parse(cfg.take_string("k_max", h.k_max.to_string()));
  h.clip_motion = cfg.take_bool("clip_motion", h.clip_motion);
  h.video_motion = cfg.take_bool("video_motion", h.video_motion);
  h.clip_question = cfg.take_bool("clip_question", h.clip_question);
  h.video_question = cfg.take_bool("video_question", h.video_question);
  h.gate_motion = cfg.take_bool("gate_motion", h.gate_motion);
  h.gate_question = cfg.take_bool("gate_question", h.gate_question);
}

void write_hierarchy_knobs(std::ostream& out, const HierarchyConfig& h) {
  out << "structure = " << HierarchyConfig::structure_name(h.structure) << "\ngroups = " << h.groups
      << "\nd = " << h.d << "\nt = " << h.t << "\nk_max = " << h.k_max.to_string()
      << "\nclip_motion = " << bool_text(h.clip_motion) << "\nvideo_motion = " << bool_text(h.video_motion)
      << "\nclip_question = " << bool_text(h.clip_question) << "\nvideo_question = " << bool_text(h.video_question)
      << "\ngate_motion = " << bool_text(h.gate_motion) << "\ngate_question = " << bool_text(h.gate_question)
      << "\n";
}

Tensor stack_field(std::span<const SyntheticSample* const> batch, Tensor VideoFeatures::*field) {
  std::vector<Tensor> parts;
  parts.reserve(batch.size());
  for (const auto* s : batch) parts.push_back(s->video.*field);
  return ops::stack(parts);
}

// [B, rest...] -> [B * C, rest...], each sample repeated C times in a row.
Tensor repeat_rows(const Tensor& x, std::size_t c) {
  Shape lifted = x.shape();
  lifted.insert(lifted.begin() + 1, 1);
  Shape spread = lifted;
  spread[1] = c;
  Shape flat = x.shape();
  flat[0] *= c;
  return ops::reshape(ops::expand(ops::reshape(x, lifted), spread), flat);
}

std::string shape_text(std::span<const std::uint64_t> e) {
  std::string s = "[";
  for (std::size_t i = 0; i < e.size(); ++i) s += (i ? ", " : "") + std::to_string(e[i]);
  return s + "]";
}

}  // namespace

// ---- model -----------------------------------------------------------------

void ModelConfig::validate() const {
  hierarchy.validate();
  answers.validate();
  if (vocab == 0) throw std::invalid_argument("model: empty vocabulary");
  if (embed_dim == 0) throw std::invalid_argument("model: embed_dim must be positive");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  write_hierarchy_knobs(out, hierarchy);
  out << "clips = " << hierarchy.clips << "\nframes_per_clip = " << hierarchy.frames_per_clip
      << "\nd_in = " << hierarchy.d_in << "\nvocab = " << vocab << "\nembed_dim = " << embed_dim
      << "\nanswers = " << answers.to_string() << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  auto cfg = KeyValueConfig::parse(text, "<model config>");
  ModelConfig m;
  read_hierarchy_knobs(cfg, m.hierarchy);
  m.hierarchy.clips = cfg.take_size("clips", m.hierarchy.clips);
  m.hierarchy.frames_per_clip = cfg.take_size("frames_per_clip", m.hierarchy.frames_per_clip);
  m.hierarchy.d_in = cfg.take_size("d_in", m.hierarchy.d_in);
  m.vocab = cfg.take_size("vocab", 0);
  m.embed_dim = cfg.take_size("embed_dim", m.embed_dim);
  m.answers = AnswerSpace::parse(cfg.take_string("answers", ""));
  cfg.finish();
  m.validate();
  return m;
}

QaModel::QaModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  hcrn_ = make_hcrn_params(store_, cfg_.hierarchy, cfg_.vocab, cfg_.embed_dim, rng);
  const auto d = cfg_.hierarchy.d;
  switch (cfg_.answers.kind) {
    case AnswerSpace::Kind::kOpenEnded:
      openended_ = make_openended_head(store_, "head", d, cfg_.answers.labels, rng);
      break;
    case AnswerSpace::Kind::kCount: count_ = make_count_head(store_, "head", d, rng); break;
    case AnswerSpace::Kind::kMultiChoice: multichoice_ = make_multichoice_head(store_, "head", d, rng); break;
  }
}

BatchResult QaModel::forward(std::span<const SyntheticSample* const> batch, std::uint64_t plan_seed) const {
  if (batch.empty()) throw std::invalid_argument("QaModel::forward: empty batch");
  const auto b = batch.size();
  const auto app = stack_field(batch, &VideoFeatures::appearance);
  const auto mot = stack_field(batch, &VideoFeatures::clip_motion);
  std::vector<QuestionTokens> questions;
  for (const auto* s : batch) questions.push_back(s->question.tokens);
  const auto out = hcrn_forward(hcrn_, cfg_.hierarchy, app, mot, questions, plan_seed);
  const auto& pooled = out.pooled.pooled;

  BatchResult r;
  if (openended_) {
    std::vector<std::size_t> targets;
    for (const auto* s : batch) {
      if (s->question.answer < 0) throw TargetError("negative label " + std::to_string(s->question.answer));
      targets.push_back(static_cast<std::size_t>(s->question.answer));
    }
    auto logits = openended_logits(pooled, out.condition, *openended_);
    r.loss = cross_entropy(logits, targets);
    for (auto i : argmax_rows(logits)) r.predictions.push_back(static_cast<std::int64_t>(i));
  } else if (count_) {
    std::vector<double> targets;
    for (const auto* s : batch) targets.push_back(static_cast<double>(s->question.answer));
    auto raw = count_raw(pooled, out.condition, *count_);
    r.loss = mse_loss(raw, targets);
    for (auto v : raw.data()) {
      r.raw.push_back(v);
      r.predictions.push_back(round_count(v, cfg_.answers.lo, cfg_.answers.hi));
    }
  } else {
    const auto c = cfg_.answers.candidates;
    std::vector<QuestionTokens> flat;
    std::vector<std::size_t> correct;
    for (const auto* s : batch) {
      if (s->question.candidates.size() != c) {
        throw std::invalid_argument("QaModel::forward: sample has " + std::to_string(s->question.candidates.size()) +
                                    " candidates, model expects " + std::to_string(c));
      }
      if (s->question.answer < 0) throw TargetError("negative candidate index");
      flat.insert(flat.end(), s->question.candidates.begin(), s->question.candidates.end());
      correct.push_back(static_cast<std::size_t>(s->question.answer));
    }
    const auto d = cfg_.hierarchy.d;
    auto a = encode_questions(flat, hcrn_.question);
    // Each candidate answer conditions its own pass over the same video.
    auto answer_pass = hcrn_video(hcrn_, cfg_.hierarchy, repeat_rows(app, c), repeat_rows(mot, c), a, plan_seed);
    auto scores = multichoice_scores(pooled, ops::reshape(answer_pass.pooled.pooled, {b, c, d}), out.condition,
                                     ops::reshape(a, {b, c, d}), *multichoice_);
    r.loss = hinge_loss(scores, correct);
    for (auto i : argmax_rows(scores)) r.predictions.push_back(static_cast<std::int64_t>(i));
  }
  return r;
}

// ---- checkpoints -----------------------------------------------------------

TensorDump checkpoint_dump(const QaModel& model) {
  TensorDump dump;
  dump.add_i64("__checkpoint_version__", {1}, {kCheckpointVersion});
  dump.add_text("__model__", model.config().to_text());
  for (const auto& [name, t] : model.params().all()) dump.add(name, t);
  return dump;
}

void save_checkpoint(const QaModel& model, const std::filesystem::path& path) { checkpoint_dump(model).save(path); }

QaModel model_from_dump(const TensorDump& dump) {
  const auto* version = dump.find("__checkpoint_version__");
  if (!version || version->i64.size() != 1) throw CheckpointError("not a checkpoint: no version tag");
  if (version->i64.front() != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version->i64.front()) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  if (!dump.find("__model__")) throw CheckpointError("checkpoint has no model configuration");
  QaModel model(ModelConfig::from_text(dump.text("__model__")), 0);
  load_parameters(model.params(), dump);
  return model;
}

QaModel load_checkpoint(const std::filesystem::path& path) { return model_from_dump(TensorDump::load(path)); }

void load_parameters(ParamStore& store, const TensorDump& dump) {
  for (const auto& e : dump.entries()) {
    if (e.name.rfind("__", 0) == 0) continue;
    if (!store.contains(e.name)) {
      throw CheckpointError("checkpoint tensor '" + e.name + "' " + shape_text(e.extents) +
                            " has no counterpart in this model");
    }
  }
  for (const auto& [name, t] : store.all()) {
    const auto* e = dump.find(name);
    if (!e) throw CheckpointError("checkpoint lacks tensor '" + name + "' of shape " + to_string(t.shape()));
    const std::vector<std::uint64_t> want(t.shape().begin(), t.shape().end());
    if (e->dtype != DType::kFloat64 || e->extents != want) {
      throw CheckpointError("tensor '" + name + "': checkpoint has shape " + shape_text(e->extents) +
                            ", model expects " + to_string(t.shape()));
    }
  }
  for (const auto& [name, t] : store.all()) {
    auto dst = Tensor(t).mutable_data();
    const auto& src = dump.at(name).f64;
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// ---- optimization ----------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i].grad();
    if (g.empty()) continue;  // untouched this step: moments and value stay put
    auto w = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
    }
  }
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (auto g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.node()->grad) g *= s;
    }
  }
  return norm;
}

double scheduled_lr(double lr0, double decay, std::size_t every, std::size_t epoch) {
  if (epoch == 0 || every == 0) throw std::invalid_argument("scheduled_lr: epochs are 1-based and every must be > 0");
  return lr0 * std::pow(decay, static_cast<double>((epoch - 1) / every));
}

// ---- metrics ---------------------------------------------------------------

bool MetricRecord::same_except_wallclock(const MetricRecord& o) const {
  return epoch == o.epoch && split == o.split && task == o.task && metric == o.metric && value == o.value;
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : out_(path, std::ios::app), path_(path) {
  if (!out_) throw std::runtime_error("cannot open metrics stream " + path.string());
}

void MetricsLog::write(const MetricRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["split"] = r.split;
  j["task"] = r.task;
  j["metric"] = r.metric;
  j["value"] = r.value;
  j["wallclock"] = r.wallclock;
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("write failed on " + path_.string());
}

std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out.push_back({j.at("epoch").get<std::size_t>(), j.at("split"), j.at("task"), j.at("metric"),
                   j.at("value").get<double>(), j.at("wallclock").get<double>()});
  }
  return out;
}

// ---- evaluation ------------------------------------------------------------

EvalResult score_predictions(std::vector<std::int64_t> predictions, const std::vector<SyntheticSample>& samples,
                             const AnswerSpace& answers) {
  if (predictions.size() != samples.size()) {
    throw std::invalid_argument("score_predictions: " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(samples.size()) + " samples");
  }
  EvalResult r;
  r.samples = samples.size();
  if (samples.empty()) return r;
  double sq = 0.0;
  std::size_t right = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto diff = static_cast<double>(predictions[i] - samples[i].question.answer);
    right += diff == 0.0;
    sq += diff * diff;
  }
  const auto n = static_cast<double>(samples.size());
  r.accuracy = static_cast<double>(right) / n;
  r.mse = answers.kind == AnswerSpace::Kind::kCount ? sq / n : 0.0;
  r.predictions = std::move(predictions);
  return r;
}

EvalResult evaluate(const QaModel& model, const std::vector<SyntheticSample>& samples, std::size_t batch_size,
                    std::uint64_t eval_seed) {
  if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
  NoGradScope no_grad;
  double loss = 0.0;
  std::vector<std::int64_t> predictions;
  std::vector<const SyntheticSample*> batch;
  for (std::size_t start = 0, index = 0; start < samples.size(); start += batch_size, ++index) {
    batch.clear();
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) batch.push_back(&samples[i]);
    auto out = model.forward(batch, mix_seed(eval_seed, index));
    loss += out.loss.item() * static_cast<double>(batch.size());
    predictions.insert(predictions.end(), out.predictions.begin(), out.predictions.end());
  }
  auto r = score_predictions(std::move(predictions), samples, model.config().answers);
  if (!samples.empty()) r.loss = loss / static_cast<double>(samples.size());
  return r;
}

double selection_score(const EvalResult& r, const AnswerSpace& answers) {
  return answers.kind == AnswerSpace::Kind::kCount ? -r.mse : r.accuracy;
}

// ---- runs ------------------------------------------------------------------

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("run config: " + m); };
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(lr_decay > 0.0) || lr_decay > 1.0) fail("lr_decay must lie in (0, 1]");
  if (lr_decay_every == 0) fail("lr_decay_every must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    fail("adam betas must lie in [0, 1) and eps must be positive");
  }
  if (embed_dim == 0) fail("embed_dim must be positive");
  if (!dataset) data.validate();
}

RunConfig RunConfig::from_config(KeyValueConfig& cfg) {
  RunConfig r;
  read_hierarchy_knobs(cfg, r.model);
  r.embed_dim = cfg.take_size("embed_dim", r.embed_dim);
  const auto dir = cfg.take_string("dataset", "");
  if (!dir.empty()) r.dataset = dir;
  auto data = cfg.extract("data.");
  if (r.dataset && !data.empty()) throw ConfigError("set either 'dataset' or 'data.*' keys, not both");
  r.data = SyntheticSpec::from_config(data);
  data.finish();
  r.lr = cfg.take_double("lr", r.lr);
  r.lr_decay = cfg.take_double("lr_decay", r.lr_decay);
  r.lr_decay_every = cfg.take_size("lr_decay_every", r.lr_decay_every);
  r.epochs = cfg.take_size("epochs", r.epochs);
  r.batch_size = cfg.take_size("batch_size", r.batch_size);
  r.clip_norm = cfg.take_double("clip_norm", r.clip_norm);
  r.adam.beta1 = cfg.take_double("adam_beta1", r.adam.beta1);
  r.adam.beta2 = cfg.take_double("adam_beta2", r.adam.beta2);
  r.adam.eps = cfg.take_double("adam_eps", r.adam.eps);
  r.seed = static_cast<std::uint64_t>(cfg.take_size("seed", r.seed));
  r.eval_seed = static_cast<std::uint64_t>(cfg.take_size("eval_seed", r.eval_seed));
  r.out = cfg.take_string("out", r.out.string());
  r.validate();
  return r;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  auto cfg = KeyValueConfig::load(path);
  auto r = from_config(cfg);
  cfg.finish();
  return r;
}

RunConfig RunConfig::parse(const std::string& text) {
  auto cfg = KeyValueConfig::parse(text);
  auto r = from_config(cfg);
  cfg.finish();
  return r;
}

ModelConfig model_config_for(const RunConfig& run, const Dataset& data) {
  ModelConfig m;
  m.hierarchy = run.model;
  m.hierarchy.clips = data.spec.clips;
  m.hierarchy.frames_per_clip = data.spec.frames_per_clip;
  m.hierarchy.d_in = data.spec.d_in;
  m.vocab = data.vocab.size();
  m.embed_dim = run.embed_dim;
  m.answers = data.spec.answer_space();
  m.validate();
  return m;
}

TrainResult train(const RunConfig& run, const std::function<void(const std::string&)>& log) {
  const auto data = run.dataset ? load_dataset(*run.dataset) : generate_dataset(run.data);
  return train(run, data, log);
}

TrainResult train(const RunConfig& run, const Dataset& data, const std::function<void(const std::string&)>& log) {
  namespace fs = std::filesystem;
  run.validate();
  const auto mcfg = model_config_for(run, data);
  QaModel model(mcfg, mix_seed(run.seed, kInitStream));
  const auto& answers = mcfg.answers;
  const auto task = task_name(data.spec.task);
  const bool is_count = answers.kind == AnswerSpace::Kind::kCount;

  fs::create_directories(run.out);
  {
    std::ofstream cfg_out(run.out / "config.txt");
    cfg_out << mcfg.to_text();
  }
  TrainResult result;
  result.metrics = run.out / "metrics.jsonl";
  result.best_checkpoint = run.out / "best.ckpt";
  fs::remove(result.metrics);  // a run owns its stream from the first record
  MetricsLog metrics(result.metrics);
  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](std::size_t epoch, const std::string& split, const std::string& metric, double value) {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    metrics.write({epoch, split, task, metric, value, wall});
  };
  auto emit_eval = [&](std::size_t epoch, const std::string& split, const EvalResult& r) {
    emit(epoch, split, "loss", r.loss);
    emit(epoch, split, "accuracy", r.accuracy);
    if (is_count) emit(epoch, split, "mse", r.mse);
  };
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };

  const auto& train_set = data.split("train");
  const auto& val_set = data.split("val");
  if (train_set.empty() && run.epochs > 0) throw TrainingError("training split is empty");

  result.best_val = evaluate(model, val_set, run.batch_size, run.eval_seed);
  emit_eval(0, "val", result.best_val);
  double best_score = selection_score(result.best_val, answers);
  save_checkpoint(model, result.best_checkpoint);

  auto params = model.params().tensors();
  Adam opt(params, run.adam);
  std::vector<std::size_t> order(train_set.size());
  std::vector<const SyntheticSample*> batch;
  for (std::size_t epoch = 1; epoch <= run.epochs; ++epoch) {
    const double lr = scheduled_lr(run.lr, run.lr_decay, run.lr_decay_every, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(mix_seed(run.seed, kShuffleStream + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0, sq_sum = 0.0;
    std::size_t right = 0, clipped = 0;
    for (std::size_t start = 0; start < order.size(); start += run.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + run.batch_size); ++i) {
        batch.push_back(&train_set[order[i]]);
      }
      model.params().zero_grad();
      Tape tape;
      BatchResult out;
      {
        TapeScope scope(tape);
        out = model.forward(batch, mix_seed(mix_seed(run.seed, kPlanStream), result.steps));
        const double loss = out.loss.item();
        if (!std::isfinite(loss)) {
          throw TrainingError("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch) +
                              ", step " + std::to_string(result.steps) + " (lr " + std::to_string(lr) + ")");
        }
        tape.backward(out.loss);
      }
      const double norm = clip_grad_norm(params, run.clip_norm);
      if (!std::isfinite(norm)) {
        throw TrainingError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(result.steps));
      }
      if (norm > run.clip_norm) ++clipped;
      opt.step(lr);
      ++result.steps;
      loss_sum += out.loss.item() * static_cast<double>(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto p = out.predictions[i], y = batch[i]->question.answer;
        right += p == y;
        sq_sum += static_cast<double>((p - y) * (p - y));
      }
    }
    result.clipped_steps += clipped;
    const auto n = static_cast<double>(train_set.size());
    emit(epoch, "train", "loss", loss_sum / n);
    emit(epoch, "train", "accuracy", static_cast<double>(right) / n);
    if (is_count) emit(epoch, "train", "mse", sq_sum / n);
    emit(epoch, "train", "lr", lr);
    if (clipped) emit(epoch, "train", "grad_clipped_steps", static_cast<double>(clipped));

    auto val = evaluate(model, val_set, run.batch_size, run.eval_seed);
    emit_eval(epoch, "val", val);
    const double score = selection_score(val, answers);
    std::ostringstream line;
    line << "epoch " << epoch << " lr " << lr << " train_loss " << loss_sum / n << " train_acc "
         << static_cast<double>(right) / n << " val_loss " << val.loss << " val_acc " << val.accuracy;
    if (is_count) line << " val_mse " << val.mse;
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.best_val = val;
      save_checkpoint(model, result.best_checkpoint);
      line << " *";
    }
    say(line.str());
  }
  save_checkpoint(model, run.out / "last.ckpt");

  if (data.splits.count("test") && !data.split("test").empty()) {
    const auto best = load_checkpoint(result.best_checkpoint);
    result.test = evaluate(best, data.split("test"), run.batch_size, run.eval_seed);
    emit_eval(result.best_epoch, "test", result.test);
  }
  return result;
}

}  // namespace hcrn
