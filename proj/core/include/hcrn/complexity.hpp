#pragma once

// Closed-form relation cost of the two- and three-level hierarchies, and the
// instrumented multiply-accumulate counts of real forward passes.

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "hcrn/hcrn_model.hpp"
#include "hcrn/kv_config.hpp"

namespace hcrn {

struct CostConfig {
  std::size_t frames_per_clip = 16;  // T
  std::size_t clips = 8;             // N
  std::size_t groups = 4;            // M
  std::size_t features = 64;         // F, mapped to d
  std::size_t t = 2;
  KMaxPolicy k_max;

  std::size_t length() const { return clips * frames_per_clip; }  // L
};

struct PredictedCost {
  double two_level = 0.0;    // 2 (T + N) L F
  double three_level = 0.0;  // 2 (T + N/M + M) L F
  double saving = 0.0;       // 2 (N - N/M - M) L F
  // Non-empty when the config leaves the derivation's regime (t = 2, k_max = n - 1).
  std::string warning;
};

// Throws std::invalid_argument for zero extents or M not dividing N.
PredictedCost predict_cost(const CostConfig& cfg);

struct MeasuredCost {
  std::uint64_t relation_linear = 0;     // inside every h^k map
  std::uint64_t relation_aggregate = 0;  // subset member means
  std::uint64_t other = 0;               // projections, encoders, attention
  double wallclock_ms = 0.0;
};

// One batch-1 forward pass of a randomly initialized model.
MeasuredCost measure_cost(const HierarchyConfig& cfg, std::uint64_t seed, std::size_t repeats = 1);

HierarchyConfig hierarchy_for(const CostConfig& cfg, HierarchyConfig::Structure structure, std::size_t d_in);

struct ScalingPoint {
  double length = 0.0;  // L
  double saving = 0.0;
};

struct ScalingReport {
  double frames_per_clip = 0.0;
  double coefficient = 0.0;        // a in saving ~ a L^2 / T (least squares)
  double max_relative_residual = 0.0;
  // saving[i+1] / saving[i] for consecutive points.
  std::vector<double> step_ratios;
};

// Needs at least 3 points with distinct positive L.
ScalingReport scaling_report(const std::vector<ScalingPoint>& points, std::size_t frames_per_clip);

struct BenchConfig {
  CostConfig base;
  std::vector<std::size_t> clips{8};
  std::size_t d_in = 32;
  std::string measure = "hk";  // hk | aggregate
  std::uint64_t seed = 1;
  std::size_t repeats = 1;

  static BenchConfig from_config(KeyValueConfig& cfg);
  static BenchConfig load(const std::filesystem::path& path);
};

struct BenchRow {
  std::size_t config_id = 0;
  std::size_t clips = 0;
  std::string level;  // "2-level", "3-level" or "saving"
  double predicted = 0.0;
  double measured = 0.0;
  double wallclock_ms = 0.0;
};

struct BenchReport {
  BenchConfig config;
  std::vector<BenchRow> rows;
  std::vector<std::string> notes;
};

BenchReport run_bench(const BenchConfig& cfg);

// Comma-separated rows under a header; notes become '#' comment lines.
void write_bench_table(std::ostream& out, const BenchReport& report);

}  // namespace hcrn
