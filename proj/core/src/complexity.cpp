#include "hcrn/complexity.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "hcrn/ops.hpp"
#include "hcrn/params.hpp"

namespace hcrn {

PredictedCost predict_cost(const CostConfig& c) {
  if (c.frames_per_clip == 0 || c.clips == 0 || c.groups == 0 || c.features == 0) {
    throw std::invalid_argument("predict_cost: T, N, M and F must be positive");
  }
  if (c.clips % c.groups != 0) throw std::invalid_argument("predict_cost: M must divide N");
  const double t = static_cast<double>(c.frames_per_clip), n = static_cast<double>(c.clips),
               m = static_cast<double>(c.groups), lf = static_cast<double>(c.length() * c.features);
  PredictedCost p;
  p.two_level = 2.0 * (t + n) * lf;
  p.three_level = 2.0 * (t + n / m + m) * lf;
  p.saving = p.two_level - p.three_level;
  if (c.t != 2 || c.k_max.kind != KMaxPolicy::Kind::kAllButOne) {
    p.warning = "the closed form assumes t = 2 and k_max = n-1; got t = " + std::to_string(c.t) +
                ", k_max = " + c.k_max.to_string();
  }
  return p;
}

HierarchyConfig hierarchy_for(const CostConfig& c, HierarchyConfig::Structure structure, std::size_t d_in) {
  HierarchyConfig h;
  h.structure = structure;
  h.clips = c.clips;
  h.frames_per_clip = c.frames_per_clip;
  h.groups = c.groups;
  h.d = c.features;
  h.d_in = d_in;
  h.t = c.t;
  h.k_max = c.k_max;
  return h;
}

MeasuredCost measure_cost(const HierarchyConfig& cfg, std::uint64_t seed, std::size_t repeats) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  const auto p = make_hcrn_params(store, cfg, 4, 4, rng);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random = [&](Shape s) {
    std::vector<double> v(numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(s), std::move(v));
  };
  const auto app = random({1, cfg.clips, cfg.frames_per_clip, cfg.d_in});
  const auto mot = random({1, cfg.clips, cfg.d_in});
  const auto cue = random({1, cfg.d});

  NoGradScope no_grad;
  MeasuredCost m;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
    ops::reset_cost_counters();
    const auto start = std::chrono::steady_clock::now();
    hcrn_video(p, cfg, app, mot, cue, seed);
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
    const auto& c = ops::cost_counters();
    m.relation_linear = c.of(ops::CostCategory::kRelationLinear);
    m.relation_aggregate = c.of(ops::CostCategory::kRelationAggregate);
    m.other = c.of(ops::CostCategory::kOther);
  }
  m.wallclock_ms = best;
  return m;
}

ScalingReport scaling_report(const std::vector<ScalingPoint>& points, std::size_t frames_per_clip) {
  if (points.size() < 3) throw std::invalid_argument("scaling_report: need at least 3 video lengths");
  if (frames_per_clip == 0) throw std::invalid_argument("scaling_report: T must be positive");
  ScalingReport r;
  r.frames_per_clip = static_cast<double>(frames_per_clip);
  double xy = 0.0, xx = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].length > 0.0)) throw std::invalid_argument("scaling_report: lengths must be positive");
    for (std::size_t j = 0; j < i; ++j) {
      if (points[j].length == points[i].length) throw std::invalid_argument("scaling_report: repeated length");
    }
    const double x = points[i].length * points[i].length / r.frames_per_clip;
    xy += x * points[i].saving;
    xx += x * x;
  }
  r.coefficient = xy / xx;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double fit = r.coefficient * points[i].length * points[i].length / r.frames_per_clip;
    r.max_relative_residual = std::max(r.max_relative_residual, std::abs(points[i].saving - fit) /
                                                                    std::abs(points[i].saving));
    if (i > 0) r.step_ratios.push_back(points[i].saving / points[i - 1].saving);
  }
  return r;
}

BenchConfig BenchConfig::from_config(KeyValueConfig& cfg) {
  BenchConfig b;
  b.base.frames_per_clip = cfg.take_size("frames_per_clip", b.base.frames_per_clip);
  b.base.groups = cfg.take_size("groups", b.base.groups);
  b.base.features = cfg.take_size("d", b.base.features);
  b.base.t = cfg.take_size("t", b.base.t);
  b.base.k_max = KMaxPolicy::parse(cfg.take_string("k_max", b.base.k_max.to_string()));
  b.d_in = cfg.take_size("d_in", b.d_in);
  b.measure = cfg.take_string("measure", b.measure);
  if (b.measure != "hk" && b.measure != "aggregate") throw ConfigError("measure must be 'hk' or 'aggregate'");
  b.seed = static_cast<std::uint64_t>(cfg.take_size("seed", b.seed));
  b.repeats = cfg.take_size("repeats", b.repeats);
  const auto list = cfg.take_string("clips", "8");
  b.clips.clear();
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    auto item_cfg = KeyValueConfig::parse("clips = " + item);
    b.clips.push_back(item_cfg.take_size("clips", 0));
  }
  if (b.clips.empty()) throw ConfigError("clips must list at least one value");
  return b;
}

BenchConfig BenchConfig::load(const std::filesystem::path& path) {
  auto cfg = KeyValueConfig::load(path);
  auto b = from_config(cfg);
  cfg.finish();
  return b;
}

BenchReport run_bench(const BenchConfig& cfg) {
  BenchReport report{cfg, {}, {}};
  auto pick = [&](const MeasuredCost& m) {
    return static_cast<double>(cfg.measure == "hk" ? m.relation_linear : m.relation_aggregate);
  };
  std::vector<ScalingPoint> predicted_points, measured_points;
  double calibration = 0.0;
  for (std::size_t id = 0; id < cfg.clips.size(); ++id) {
    auto c = cfg.base;
    c.clips = cfg.clips[id];
    const auto pred = predict_cost(c);
    if (!pred.warning.empty() && id == 0) report.notes.push_back(pred.warning);
    const auto two = measure_cost(hierarchy_for(c, HierarchyConfig::Structure::kTwoLevel, cfg.d_in), cfg.seed,
                                  cfg.repeats);
    const auto three = measure_cost(hierarchy_for(c, HierarchyConfig::Structure::kThreeLevel, cfg.d_in), cfg.seed,
                                    cfg.repeats);
    const double m2 = pick(two), m3 = pick(three);
    report.rows.push_back({id, c.clips, "2-level", pred.two_level, m2, two.wallclock_ms});
    report.rows.push_back({id, c.clips, "3-level", pred.three_level, m3, three.wallclock_ms});
    report.rows.push_back({id, c.clips, "saving", pred.saving, m2 - m3, two.wallclock_ms - three.wallclock_ms});
    if (id == 0) calibration = m2 / pred.two_level;
    std::ostringstream note;
    note << std::setprecision(4) << "config " << id << " (N=" << c.clips << ", L=" << c.length()
         << "): 2-level/3-level predicted " << pred.two_level / pred.three_level << ", measured " << m2 / m3
         << "; calibrated prediction / measured: 2-level " << calibration * pred.two_level / m2 << ", 3-level "
         << calibration * pred.three_level / m3;
    report.notes.push_back(note.str());
    predicted_points.push_back({static_cast<double>(c.length()), pred.saving});
    measured_points.push_back({static_cast<double>(c.length()), m2 - m3});
  }
  report.notes.push_back("calibration factor (measured / predicted, config 0, 2-level): " +
                         std::to_string(calibration));
  std::vector<std::size_t> distinct = cfg.clips;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() != cfg.clips.size()) {
    report.notes.push_back("saving fit skipped: clip counts repeat");
  } else if (cfg.clips.size() >= 3) {
    for (const auto* series : {&predicted_points, &measured_points}) {
      const auto fit = scaling_report(*series, cfg.base.frames_per_clip);
      std::ostringstream note;
      note << std::setprecision(4) << (series == &predicted_points ? "predicted" : "measured")
           << " saving ~ a L^2 / T: a = " << fit.coefficient << ", max relative residual "
           << fit.max_relative_residual << ", step ratios";
      for (auto r : fit.step_ratios) note << " " << r;
      report.notes.push_back(note.str());
    }
  }
  return report;
}

void write_bench_table(std::ostream& out, const BenchReport& report) {
  out << "# measure = " << report.config.measure << " multiply-accumulates\n";
  for (const auto& n : report.notes) out << "# " << n << "\n";
  out << "config_id,clips,level,predicted,measured,wallclock_ms\n";
  out << std::setprecision(12);
  for (const auto& r : report.rows) {
    out << r.config_id << ',' << r.clips << ',' << r.level << ',' << r.predicted << ',' << r.measured << ','
        << std::setprecision(6) << r.wallclock_ms << std::setprecision(12) << '\n';
  }
}

}  // namespace hcrn
