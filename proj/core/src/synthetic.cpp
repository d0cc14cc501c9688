#include "hcrn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "hcrn/sampler.hpp"
#include "hcrn/tensor_dump.hpp"

namespace hcrn {

namespace {

constexpr std::uint64_t kPrototypeStream = 0x70726f746fULL;
constexpr std::size_t kMaxDistractors = 3;
constexpr int kMaxAttempts = 1000;

const char* const kSplitNames[] = {"train", "val", "test"};

std::uint64_t split_stream(const std::string& split) {
  for (std::uint64_t i = 0; i < 3; ++i) {
    if (split == kSplitNames[i]) return i + 1;
  }
  throw std::invalid_argument("unknown split '" + split + "' (expected train, val or test)");
}

std::size_t uniform(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Entries N(0, 1/n), so prototypes have unit expected norm and σ is a per-coordinate noise level.
std::vector<double> gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::string action_token(std::size_t a) { return "a" + std::to_string(a); }
std::string bucket_token(std::size_t k) { return "b" + std::to_string(k); }

// Splits `total` frames into `parts` durations of at least `min_len` each.
std::vector<std::size_t> random_durations(std::size_t parts, std::size_t total, std::size_t min_len,
                                          std::mt19937_64& rng) {
  if (parts * min_len > total) throw std::invalid_argument("program does not fit the video length");
  const auto spare = total - parts * min_len;
  std::vector<std::size_t> cuts{0, spare};
  for (std::size_t i = 1; i < parts; ++i) cuts.push_back(uniform(rng, 0, spare));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < parts; ++i) out.push_back(min_len + cuts[i + 1] - cuts[i]);
  return out;
}

LatentProgram assemble(const std::vector<std::size_t>& actions, const SyntheticSpec& spec, std::mt19937_64& rng) {
  auto durations = random_durations(actions.size(), spec.length(), spec.min_duration, rng);
  LatentProgram p;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    p.segments.push_back({actions[i], durations[i], uniform(rng, 0, spec.attributes - 1)});
  }
  return p;
}

std::size_t target_index(std::int64_t target, std::size_t extent, const char* what) {
  if (target < 0 || static_cast<std::size_t>(target) >= extent) {
    throw std::invalid_argument(std::string(what) + " target " + std::to_string(target) + " out of range");
  }
  return static_cast<std::size_t>(target);
}

std::size_t frame_of_bucket(const SyntheticSpec& spec, std::size_t k) {
  return k * spec.frames_per_clip + spec.frames_per_clip / 2;
}

std::vector<std::size_t> repeated_actions(const std::vector<std::size_t>& counts) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < counts.size(); ++a) {
    if (counts[a] >= 2) out.push_back(a);
  }
  return out;
}

template <class T>
const T& pick(const std::vector<T>& options, std::mt19937_64& rng) {
  return options[uniform(rng, 0, options.size() - 1)];
}

double sq_dist(std::span<const double> x, const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - a[i] - b[i];
    s += r * r;
  }
  return s;
}

}  // namespace

std::string task_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::kTransition: return "transition";
    case TaskKind::kCount: return "count";
    case TaskKind::kFrameQa: return "frameqa";
    case TaskKind::kAction: return "action";
  }
  return "";
}

TaskKind parse_task(const std::string& text) {
  for (auto k : {TaskKind::kTransition, TaskKind::kCount, TaskKind::kFrameQa, TaskKind::kAction}) {
    if (task_name(k) == text) return k;
  }
  throw std::invalid_argument("unknown task '" + text + "' (expected transition, count, frameqa or action)");
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("synthetic spec: " + m); };
  if (actions < 2) fail("need at least 2 actions");
  if (attributes < 2) fail("need at least 2 attributes");
  if (d_in == 0 || clips == 0 || frames_per_clip == 0) fail("d_in, clips and frames_per_clip must be positive");
  if (min_duration == 0) fail("min_duration must be positive");
  if (!(noise >= 0.0) || !std::isfinite(noise)) fail("noise must be a finite non-negative number");
  if (make_vocabulary(*this).size() > 64) fail("vocabulary exceeds 64 tokens");
  std::size_t longest = 0;
  switch (task) {
    case TaskKind::kTransition: longest = actions; break;
    case TaskKind::kCount:
      if (count_lo < 1 || count_hi < count_lo) fail("count range must satisfy 1 <= count_lo <= count_hi");
      longest = static_cast<std::size_t>(count_hi) + kMaxDistractors;
      break;
    case TaskKind::kFrameQa: longest = 6; break;
    case TaskKind::kAction:
      if (candidates < 2 || candidates > actions) fail("candidates must lie in [2, actions]");
      longest = 3 + std::min(kMaxDistractors, actions - 1);
      break;
  }
  if (longest * min_duration > length()) {
    fail("programs of up to " + std::to_string(longest) + " segments of " + std::to_string(min_duration) +
         " frames do not fit " + std::to_string(length()) + " frames");
  }
}

AnswerSpace SyntheticSpec::answer_space() const {
  switch (task) {
    case TaskKind::kTransition: return AnswerSpace::open_ended(actions);
    case TaskKind::kCount: return AnswerSpace::count(count_lo, count_hi);
    case TaskKind::kFrameQa: return AnswerSpace::open_ended(attributes);
    case TaskKind::kAction: return AnswerSpace::multi_choice(candidates);
  }
  return {};
}

SyntheticSpec SyntheticSpec::from_config(KeyValueConfig& cfg) {
  SyntheticSpec s;
  s.task = parse_task(cfg.take_string("task", task_name(s.task)));
  s.actions = cfg.take_size("actions", s.actions);
  s.attributes = cfg.take_size("attributes", s.attributes);
  s.d_in = cfg.take_size("d_in", s.d_in);
  s.clips = cfg.take_size("clips", s.clips);
  s.frames_per_clip = cfg.take_size("frames_per_clip", s.frames_per_clip);
  s.noise = cfg.take_double("noise", s.noise);
  s.min_duration = cfg.take_size("min_duration", s.min_duration);
  s.count_lo = cfg.take_int("count_lo", s.count_lo);
  s.count_hi = cfg.take_int("count_hi", s.count_hi);
  s.candidates = cfg.take_size("candidates", s.candidates);
  s.train = cfg.take_size("train", s.train);
  s.val = cfg.take_size("val", s.val);
  s.test = cfg.take_size("test", s.test);
  s.seed = static_cast<std::uint64_t>(cfg.take_size("seed", s.seed));
  s.validate();
  return s;
}

SyntheticSpec SyntheticSpec::load(const std::filesystem::path& path) {
  auto cfg = KeyValueConfig::load(path);
  auto s = from_config(cfg);
  cfg.finish();
  return s;
}

std::string SyntheticSpec::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "task = " << task_name(task) << "\nactions = " << actions << "\nattributes = " << attributes
      << "\nd_in = " << d_in << "\nclips = " << clips << "\nframes_per_clip = " << frames_per_clip
      << "\nnoise = " << noise << "\nmin_duration = " << min_duration << "\ncount_lo = " << count_lo
      << "\ncount_hi = " << count_hi << "\ncandidates = " << candidates << "\ntrain = " << train
      << "\nval = " << val << "\ntest = " << test << "\nseed = " << seed << "\n";
  return out.str();
}

std::size_t LatentProgram::length() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.duration;
  return n;
}

std::size_t LatentProgram::segment_count(std::size_t action) const {
  return static_cast<std::size_t>(
      std::count_if(segments.begin(), segments.end(), [&](const Segment& s) { return s.action == action; }));
}

const Segment& LatentProgram::at_frame(std::size_t frame) const {
  std::size_t end = 0;
  for (const auto& s : segments) {
    end += s.duration;
    if (frame < end) return s;
  }
  throw std::out_of_range("frame " + std::to_string(frame) + " beyond program length " + std::to_string(end));
}

Prototypes Prototypes::generate(const SyntheticSpec& spec) {
  std::mt19937_64 rng(mix_seed(spec.seed, kPrototypeStream));
  Prototypes p;
  for (std::size_t a = 0; a < spec.actions; ++a) {
    p.appearance.push_back(gaussian(spec.d_in, rng));
    p.motion.push_back(gaussian(spec.d_in, rng));
    p.entry.push_back(gaussian(spec.d_in, rng));
    p.exit.push_back(gaussian(spec.d_in, rng));
  }
  for (std::size_t i = 0; i < spec.attributes; ++i) p.attribute.push_back(gaussian(spec.d_in, rng));
  return p;
}

VideoFeatures gen_video(const LatentProgram& program, const Prototypes& protos, const SyntheticSpec& spec,
                        double noise, std::mt19937_64& rng) {
  const auto n = spec.clips, t = spec.frames_per_clip, d = spec.d_in;
  if (program.length() != n * t) {
    throw std::invalid_argument("gen_video: durations sum to " + std::to_string(program.length()) + ", expected " +
                                std::to_string(n * t));
  }
  for (const auto& s : program.segments) {
    if (s.duration == 0 || s.action >= protos.appearance.size() || s.attribute >= protos.attribute.size()) {
      throw std::invalid_argument("gen_video: segment with zero duration or unknown action/attribute");
    }
  }
  std::normal_distribution<double> eps(0.0, 1.0);
  std::vector<double> app(n * t * d), mot(n * d, 0.0);
  std::size_t frame = 0;
  for (std::size_t si = 0; si < program.segments.size(); ++si) {
    const auto& seg = program.segments[si];
    if (si > 0) {
      const auto& prev = program.segments[si - 1];
      auto* m = &mot[(frame / t) * d];
      for (std::size_t k = 0; k < d; ++k) m[k] += protos.entry[seg.action][k] - protos.exit[prev.action][k];
    }
    for (std::size_t f = 0; f < seg.duration; ++f, ++frame) {
      auto* m = &mot[(frame / t) * d];
      for (std::size_t k = 0; k < d; ++k) {
        app[frame * d + k] = protos.appearance[seg.action][k] + protos.attribute[seg.attribute][k];
        m[k] += protos.motion[seg.action][k] / static_cast<double>(t);
      }
    }
  }
  // Noise is drawn after the clean signal so σ never changes the program-dependent draws.
  if (noise > 0.0) {
    for (auto& x : app) x += noise * eps(rng);
    for (auto& x : mot) x += noise * eps(rng);
  }
  return {Tensor::from({n, t, d}, std::move(app)), Tensor::from({n, d}, std::move(mot))};
}

Vocabulary make_vocabulary(const SyntheticSpec& spec) {
  std::vector<std::string> words{"<pad>", "after", "before", "count", "attr", "what", "repeat"};
  for (std::size_t a = 0; a < spec.actions; ++a) words.push_back(action_token(a));
  for (std::size_t k = 0; k < spec.clips; ++k) words.push_back(bucket_token(k));
  return Vocabulary(std::move(words));
}

GeneratedQuestion gen_question(const LatentProgram& program, const SyntheticSpec& spec, const Vocabulary& vocab,
                               std::mt19937_64& rng, std::optional<std::int64_t> target) {
  const auto& segs = program.segments;
  std::vector<std::size_t> counts(spec.actions, 0);
  for (const auto& s : segs) {
    if (s.action >= spec.actions) throw std::invalid_argument("gen_question: program uses an unknown action");
    ++counts[s.action];
  }
  auto wanted = [&](std::int64_t answer) { return !target || *target == answer; };

  switch (spec.task) {
    case TaskKind::kTransition: {
      // Only actions shown once have a well-defined neighbour.
      std::vector<std::pair<std::vector<std::string>, std::int64_t>> options;
      for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
        const auto x = segs[i].action, y = segs[i + 1].action;
        if (x == y) continue;
        if (counts[x] == 1 && wanted(static_cast<std::int64_t>(y))) {
          options.push_back({{"after", action_token(x)}, static_cast<std::int64_t>(y)});
        }
        if (counts[y] == 1 && wanted(static_cast<std::int64_t>(x))) {
          options.push_back({{"before", action_token(y)}, static_cast<std::int64_t>(x)});
        }
      }
      if (options.empty()) throw UnsatisfiableQuestion("no transition with the requested answer");
      const auto& [words, answer] = pick(options, rng);
      return {vocab.encode(words), answer, {}};
    }
    case TaskKind::kCount: {
      std::vector<std::size_t> options;
      for (std::size_t a = 0; a < spec.actions; ++a) {
        const auto c = static_cast<std::int64_t>(counts[a]);
        if (c >= spec.count_lo && c <= spec.count_hi && wanted(c)) options.push_back(a);
      }
      if (options.empty()) throw UnsatisfiableQuestion("no action with a countable number of segments");
      const auto a = pick(options, rng);
      return {vocab.encode({"count", action_token(a)}), static_cast<std::int64_t>(counts[a]), {}};
    }
    case TaskKind::kFrameQa: {
      std::vector<std::size_t> options;
      for (std::size_t k = 0; k < spec.clips; ++k) {
        if (wanted(static_cast<std::int64_t>(program.at_frame(frame_of_bucket(spec, k)).attribute))) {
          options.push_back(k);
        }
      }
      if (options.empty()) throw UnsatisfiableQuestion("no clip shows the requested attribute");
      const auto k = pick(options, rng);
      return {vocab.encode({"attr", bucket_token(k)}),
              static_cast<std::int64_t>(program.at_frame(frame_of_bucket(spec, k)).attribute),
              {}};
    }
    case TaskKind::kAction: {
      auto repeated = repeated_actions(counts);
      if (repeated.size() != 1) throw UnsatisfiableQuestion("program must repeat exactly one action");
      const auto correct = repeated.front();
      std::vector<std::size_t> others;
      for (std::size_t a = 0; a < spec.actions; ++a) {
        if (a != correct) others.push_back(a);
      }
      std::shuffle(others.begin(), others.end(), rng);
      others.resize(spec.candidates - 1);
      const auto slot = target ? target_index(*target, spec.candidates, "action")
                               : uniform(rng, 0, spec.candidates - 1);
      others.insert(others.begin() + static_cast<std::ptrdiff_t>(slot), correct);
      GeneratedQuestion q{vocab.encode({"what", "repeat"}), static_cast<std::int64_t>(slot), {}};
      for (auto a : others) q.candidates.push_back(vocab.encode({action_token(a)}));
      return q;
    }
  }
  throw std::logic_error("gen_question: unhandled task");
}

LatentProgram gen_program(const SyntheticSpec& spec, std::int64_t target, std::mt19937_64& rng) {
  std::vector<std::size_t> all(spec.actions);
  std::iota(all.begin(), all.end(), 0);
  switch (spec.task) {
    case TaskKind::kTransition: {
      target_index(target, spec.actions, "transition");
      std::shuffle(all.begin(), all.end(), rng);
      return assemble(all, spec, rng);
    }
    case TaskKind::kCount: {
      if (target < spec.count_lo || target > spec.count_hi) {
        throw std::invalid_argument("count target " + std::to_string(target) + " out of range");
      }
      const auto focus = uniform(rng, 0, spec.actions - 1);
      std::vector<std::size_t> seq(static_cast<std::size_t>(target), focus);
      const auto distractors = uniform(rng, 1, kMaxDistractors);
      for (std::size_t i = 0; i < distractors; ++i) {
        auto a = uniform(rng, 0, spec.actions - 2);
        seq.push_back(a >= focus ? a + 1 : a);
      }
      std::shuffle(seq.begin(), seq.end(), rng);
      return assemble(seq, spec, rng);
    }
    case TaskKind::kFrameQa: {
      const auto p_target = target_index(target, spec.attributes, "frameqa");
      const auto segments = uniform(rng, 3, std::min<std::size_t>(6, spec.length() / spec.min_duration));
      std::vector<std::size_t> seq;
      for (std::size_t i = 0; i < segments; ++i) {
        auto a = uniform(rng, 0, spec.actions - 1);
        if (!seq.empty() && a == seq.back()) a = (a + 1) % spec.actions;
        seq.push_back(a);
      }
      auto p = assemble(seq, spec, rng);
      const auto frame = frame_of_bucket(spec, uniform(rng, 0, spec.clips - 1));
      const_cast<Segment&>(p.at_frame(frame)).attribute = p_target;
      return p;
    }
    case TaskKind::kAction: {
      target_index(target, spec.candidates, "action");
      std::shuffle(all.begin(), all.end(), rng);
      const auto repeated = all.front();
      std::vector<std::size_t> seq(uniform(rng, 2, 3), repeated);
      const auto others = uniform(rng, 1, std::min(kMaxDistractors, spec.actions - 1));
      seq.insert(seq.end(), all.begin() + 1, all.begin() + 1 + static_cast<std::ptrdiff_t>(others));
      std::shuffle(seq.begin(), seq.end(), rng);
      return assemble(seq, spec, rng);
    }
  }
  throw std::logic_error("gen_program: unhandled task");
}

std::size_t balanced_label_count(const SyntheticSpec& spec) {
  switch (spec.task) {
    case TaskKind::kTransition: return spec.actions;
    case TaskKind::kCount: return static_cast<std::size_t>(spec.count_hi - spec.count_lo + 1);
    case TaskKind::kFrameQa: return spec.attributes;
    case TaskKind::kAction: return spec.candidates;
  }
  return 1;
}

SyntheticSample gen_sample(const SyntheticSpec& spec, const Prototypes& protos, const Vocabulary& vocab,
                           const std::string& split, std::size_t index) {
  std::mt19937_64 rng(mix_seed(mix_seed(spec.seed, split_stream(split)), index));
  // Labels cycle through the classes so every split is balanced up to one sample per class.
  auto target = static_cast<std::int64_t>(index % balanced_label_count(spec));
  if (spec.task == TaskKind::kCount) target += spec.count_lo;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto program = gen_program(spec, target, rng);
    try {
      auto question = gen_question(program, spec, vocab, rng, target);
      auto video = gen_video(program, protos, spec, spec.noise, rng);
      return {std::move(video), std::move(question), std::move(program)};
    } catch (const UnsatisfiableQuestion&) {
    }
  }
  throw std::runtime_error("gen_sample: no satisfiable program after " + std::to_string(kMaxAttempts) + " attempts");
}

const std::vector<SyntheticSample>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw std::out_of_range("dataset has no split '" + name + "'");
  return it->second;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset data{spec, make_vocabulary(spec), {}};
  const auto protos = Prototypes::generate(spec);
  const std::pair<const char*, std::size_t> sizes[] = {{"train", spec.train}, {"val", spec.val}, {"test", spec.test}};
  for (const auto& [name, count] : sizes) {
    auto& out = data.splits[name];
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(gen_sample(spec, protos, data.vocab, name, i));
  }
  return data;
}

namespace {

std::string record_name(std::size_t index) {
  std::string s = std::to_string(index);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s + ".tdump";
}

TensorDump sample_record(const SyntheticSample& s) {
  TensorDump dump;
  dump.add("appearance", s.video.appearance);
  dump.add("clip_motion", s.video.clip_motion);
  dump.add_i64("question", {s.question.tokens.size()}, s.question.tokens);
  dump.add_i64("answer", {1}, {s.question.answer});
  if (!s.question.candidates.empty()) {
    const auto width = s.question.candidates.front().size();
    std::vector<std::int64_t> flat;
    for (const auto& c : s.question.candidates) {
      if (c.size() != width) throw std::invalid_argument("save_dataset: ragged candidate tokens");
      flat.insert(flat.end(), c.begin(), c.end());
    }
    dump.add_i64("candidates", {s.question.candidates.size(), width}, std::move(flat));
  }
  std::vector<std::int64_t> prog;
  for (const auto& seg : s.program.segments) {
    prog.push_back(static_cast<std::int64_t>(seg.action));
    prog.push_back(static_cast<std::int64_t>(seg.duration));
    prog.push_back(static_cast<std::int64_t>(seg.attribute));
  }
  dump.add_i64("program", {s.program.segments.size(), 3}, std::move(prog));
  return dump;
}

SyntheticSample parse_record(const TensorDump& dump, const std::filesystem::path& origin) {
  SyntheticSample s;
  s.video = {dump.tensor("appearance"), dump.tensor("clip_motion")};
  s.question.tokens = dump.ints("question");
  auto answer = dump.ints("answer");
  if (answer.size() != 1) throw DumpFormatError(origin.string() + ": answer must hold one value");
  s.question.answer = answer.front();
  if (const auto* c = dump.find("candidates")) {
    if (c->extents.size() != 2) throw DumpFormatError(origin.string() + ": candidates must be [C, L]");
    const auto width = static_cast<std::size_t>(c->extents[1]);
    for (std::size_t i = 0; i < c->extents[0]; ++i) {
      s.question.candidates.emplace_back(c->i64.begin() + static_cast<std::ptrdiff_t>(i * width),
                                         c->i64.begin() + static_cast<std::ptrdiff_t>((i + 1) * width));
    }
  }
  const auto& p = dump.at("program");
  if (p.extents.size() != 2 || p.extents[1] != 3) throw DumpFormatError(origin.string() + ": program must be [S, 3]");
  for (std::size_t i = 0; i < p.extents[0]; ++i) {
    s.program.segments.push_back({static_cast<std::size_t>(p.i64[3 * i]), static_cast<std::size_t>(p.i64[3 * i + 1]),
                                  static_cast<std::size_t>(p.i64[3 * i + 2])});
  }
  return s;
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "hcrn-synthetic";
  manifest["version"] = 1;
  manifest["task"] = task_name(data.spec.task);
  manifest["seed"] = data.spec.seed;
  manifest["answer_space"] = data.spec.answer_space().to_string();
  manifest["spec"] = data.spec.to_text();
  manifest["vocabulary_size"] = data.vocab.size();
  for (const auto& [name, samples] : data.splits) {
    manifest["splits"][name] = {{"count", samples.size()}, {"seed_stream", split_stream(name)}};
    fs::create_directories(dir / name);
    for (std::size_t i = 0; i < samples.size(); ++i) sample_record(samples[i]).save(dir / name / record_name(i));
  }
  data.vocab.save(dir / "vocab.txt");
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
    if (manifest.at("format") != "hcrn-synthetic" || manifest.at("version") != 1) {
      throw std::runtime_error("unsupported dataset format in " + dir.string());
    }
    auto cfg = KeyValueConfig::parse(manifest.at("spec").get<std::string>(), (dir / "manifest.json").string());
    Dataset data{SyntheticSpec::from_config(cfg), Vocabulary::load(dir / "vocab.txt"), {}};
    cfg.finish();
    for (const auto& [name, info] : manifest.at("splits").items()) {
      const auto count = info.at("count").get<std::size_t>();
      auto& out = data.splits[name];
      for (std::size_t i = 0; i < count; ++i) {
        const auto path = dir / name / record_name(i);
        out.push_back(parse_record(TensorDump::load(path), path));
      }
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

std::int64_t oracle_answer(const SyntheticSample& sample, const Prototypes& protos, const SyntheticSpec& spec,
                           const Vocabulary& vocab) {
  const auto n = spec.clips, t = spec.frames_per_clip, d = spec.d_in;
  const auto app = sample.video.appearance.data();
  const auto mot = sample.video.clip_motion.data();

  // Nearest (action, attribute) pair per frame.
  std::vector<std::size_t> act(n * t), attr(n * t);
  for (std::size_t f = 0; f < n * t; ++f) {
    auto x = app.subspan(f * d, d);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < spec.actions; ++a) {
      for (std::size_t p = 0; p < spec.attributes; ++p) {
        const double dist = sq_dist(x, protos.appearance[a], protos.attribute[p]);
        if (dist < best) best = dist, act[f] = a, attr[f] = p;
      }
    }
  }

  // Segments visible in appearance, then hidden same-action boundaries per clip
  // from the motion left over after the visible part is explained.
  std::vector<std::size_t> counts(spec.actions, 0);
  std::vector<std::size_t> order;  // distinct consecutive actions
  for (std::size_t f = 0; f < n * t; ++f) {
    if (f == 0 || act[f] != act[f - 1]) ++counts[act[f]], order.push_back(act[f]);
  }
  for (std::size_t c = 0; c < n; ++c) {
    std::vector<double> residual(mot.begin() + static_cast<std::ptrdiff_t>(c * d),
                                 mot.begin() + static_cast<std::ptrdiff_t>((c + 1) * d));
    std::vector<std::size_t> present;
    for (std::size_t f = c * t; f < (c + 1) * t; ++f) {
      for (std::size_t k = 0; k < d; ++k) residual[k] -= protos.motion[act[f]][k] / static_cast<double>(t);
      if (f > 0 && act[f] != act[f - 1]) {
        for (std::size_t k = 0; k < d; ++k) residual[k] -= protos.entry[act[f]][k] - protos.exit[act[f - 1]][k];
      }
      if (std::find(present.begin(), present.end(), act[f]) == present.end()) present.push_back(act[f]);
    }
    // Exhaustive search over small hidden-boundary counts per present action.
    constexpr std::size_t kMaxHidden = 3;
    std::vector<std::size_t> trial(present.size(), 0), best_trial = trial;
    double best = std::numeric_limits<double>::infinity();
    while (true) {
      double err = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        double r = residual[k];
        for (std::size_t i = 0; i < present.size(); ++i) {
          r -= static_cast<double>(trial[i]) * (protos.entry[present[i]][k] - protos.exit[present[i]][k]);
        }
        err += r * r;
      }
      if (err < best) best = err, best_trial = trial;
      std::size_t i = 0;
      while (i < trial.size() && trial[i] == kMaxHidden) trial[i++] = 0;
      if (i == trial.size()) break;
      ++trial[i];
    }
    for (std::size_t i = 0; i < present.size(); ++i) counts[present[i]] += best_trial[i];
  }

  const auto& q = sample.question.tokens;
  auto token_action = [&](std::int64_t id) -> std::size_t {
    const auto& tok = vocab.token(id);
    return static_cast<std::size_t>(std::stoul(tok.substr(1)));
  };
  switch (spec.task) {
    case TaskKind::kTransition: {
      const auto x = token_action(q.at(1));
      const bool after = vocab.token(q.at(0)) == "after";
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (order[i] != x) continue;
        if (after && i + 1 < order.size()) return static_cast<std::int64_t>(order[i + 1]);
        if (!after && i > 0) return static_cast<std::int64_t>(order[i - 1]);
      }
      return -1;
    }
    case TaskKind::kCount:
      return static_cast<std::int64_t>(counts[token_action(q.at(1))]);
    case TaskKind::kFrameQa:
      return static_cast<std::int64_t>(attr[frame_of_bucket(spec, token_action(q.at(1)))]);
    case TaskKind::kAction: {
      const auto most = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      for (std::size_t i = 0; i < sample.question.candidates.size(); ++i) {
        if (token_action(sample.question.candidates[i].at(0)) == most) return static_cast<std::int64_t>(i);
      }
      return -1;
    }
  }
  return -1;
}

double oracle_solvability(const std::vector<SyntheticSample>& samples, const Prototypes& protos,
                          const SyntheticSpec& spec, const Vocabulary& vocab) {
  if (samples.empty()) return 0.0;
  std::size_t right = 0;
  for (const auto& s : samples) right += oracle_answer(s, protos, spec, vocab) == s.question.answer;
  return static_cast<double>(right) / static_cast<double>(samples.size());
}

}  // namespace hcrn
