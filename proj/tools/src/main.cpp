#include <CLI11.hpp>

#include <iostream>
#include <nlohmann/json.hpp>

#include "hcrn/complexity.hpp"
#include "hcrn/synthetic.hpp"
#include "hcrn/trainer.hpp"

namespace {

int run_train(const std::string& config, const std::optional<std::uint64_t>& seed,
              const std::optional<std::string>& out) {
  auto run = hcrn::RunConfig::load(config);
  if (seed) run.seed = *seed;
  if (out) run.out = *out;
  auto result = hcrn::train(run, [](const std::string& line) { std::cerr << line << std::endl; });
  nlohmann::ordered_json j;
  j["best_epoch"] = result.best_epoch;
  j["val_accuracy"] = result.best_val.accuracy;
  j["test_accuracy"] = result.test.accuracy;
  j["test_mse"] = result.test.mse;
  j["steps"] = result.steps;
  j["clipped_steps"] = result.clipped_steps;
  j["checkpoint"] = result.best_checkpoint.string();
  j["metrics"] = result.metrics.string();
  std::cout << j.dump() << std::endl;
  return 0;
}

int run_eval(const std::string& checkpoint, const std::string& dataset, const std::string& split,
             std::size_t batch, std::uint64_t eval_seed) {
  const auto model = hcrn::load_checkpoint(checkpoint);
  const auto data = hcrn::load_dataset(dataset);
  const auto expected = hcrn::model_config_for({}, data);
  const auto& have = model.config();
  if (have.vocab != expected.vocab || have.answers.to_string() != expected.answers.to_string() ||
      have.hierarchy.clips != expected.hierarchy.clips ||
      have.hierarchy.frames_per_clip != expected.hierarchy.frames_per_clip ||
      have.hierarchy.d_in != expected.hierarchy.d_in) {
    throw hcrn::CheckpointError("checkpoint was trained for a different dataset layout");
  }
  const auto r = hcrn::evaluate(model, data.split(split), batch, eval_seed);
  const auto task = hcrn::task_name(data.spec.task);
  auto record = [&](const char* metric, double value) {
    nlohmann::ordered_json j;
    j["split"] = split;
    j["task"] = task;
    j["metric"] = metric;
    j["value"] = value;
    j["samples"] = r.samples;
    std::cout << j.dump() << "\n";
  };
  record("loss", r.loss);
  record("accuracy", r.accuracy);
  if (have.answers.kind == hcrn::AnswerSpace::Kind::kCount) record("mse", r.mse);
  return 0;
}

int run_gen(const std::string& spec_path, const std::string& out) {
  const auto spec = hcrn::SyntheticSpec::load(spec_path);
  const auto data = hcrn::generate_dataset(spec);
  hcrn::save_dataset(data, out);
  const auto protos = hcrn::Prototypes::generate(spec);
  for (const auto& [name, samples] : data.splits) {
    std::cout << name << ": " << samples.size() << " samples, oracle accuracy "
              << hcrn::oracle_solvability(samples, protos, spec, data.vocab) << "\n";
  }
  return 0;
}

int run_bench(const std::string& config) {
  const auto bench = hcrn::BenchConfig::load(config);
  hcrn::write_bench_table(std::cout, hcrn::run_bench(bench));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical conditional relation networks for video question answering"};
  app.require_subcommand(1);

  std::string config, checkpoint, dataset, spec, out_dir, split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t batch = 16;
  std::uint64_t eval_seed = 7;

  auto* train = app.add_subcommand("train", "Train a model from a key = value config");
  train->add_option("--config", config, "Run configuration")->required()->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "Override the run seed");
  train->add_option("--out", out, "Override the output directory");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--dataset", dataset, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--split", split, "Split to evaluate")->capture_default_str();
  eval->add_option("--batch-size", batch, "Evaluation batch size")->capture_default_str();
  eval->add_option("--eval-seed", eval_seed, "Seed of the frozen subset plans")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset directory");
  gen->add_option("--spec", spec, "Synthetic spec file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* bench = app.add_subcommand("bench", "Predicted versus measured relation cost");
  bench->add_option("--config", config, "Bench configuration")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return run_train(config, seed, out);
    if (eval->parsed()) return run_eval(checkpoint, dataset, split, batch, eval_seed);
    if (gen->parsed()) return run_gen(spec, out_dir);
    if (bench->parsed()) return run_bench(config);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
