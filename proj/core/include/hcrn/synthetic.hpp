#pragma once

// Procedural video-QA problems with a known latent program.
//
// Every action has four random prototypes: appearance, motion, entry and exit.
// Attributes have an appearance prototype. A frame shows its segment's action
// and attribute prototypes plus noise. A clip's motion vector is the mean of
// the motion prototypes of its frames plus, for every segment boundary a -> b
// inside the clip, (entry_b - exit_a), plus noise. Two back-to-back segments of
// the same action therefore look identical frame by frame and can be told
// apart only through motion.
//
// Question templates (tokens in the closed vocabulary):
//   transition  [after|before, a_x]  -> action label
//   count       [count, a_x]         -> number of segments of a_x
//   frameqa     [attr, b_k]          -> attribute at the middle frame of clip k
//   action      [what, repeat]       -> index of the repeated action among candidates [a_i]

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcrn/decoders.hpp"
#include "hcrn/encoders.hpp"
#include "hcrn/kv_config.hpp"

namespace hcrn {

enum class TaskKind { kTransition, kCount, kFrameQa, kAction };

std::string task_name(TaskKind kind);
TaskKind parse_task(const std::string& text);

struct SyntheticSpec {
  TaskKind task = TaskKind::kTransition;
  std::size_t actions = 4;
  std::size_t attributes = 6;
  std::size_t d_in = 32;
  std::size_t clips = 8;
  std::size_t frames_per_clip = 16;
  double noise = 0.1;
  std::size_t min_duration = 6;
  std::int64_t count_lo = 1;
  std::int64_t count_hi = 5;
  std::size_t candidates = 5;
  std::size_t train = 2000;
  std::size_t val = 500;
  std::size_t test = 500;
  std::uint64_t seed = 1;

  std::size_t length() const { return clips * frames_per_clip; }
  void validate() const;
  AnswerSpace answer_space() const;

  // Reads the keys above from a key = value file; unknown keys are errors.
  static SyntheticSpec from_config(KeyValueConfig& cfg);
  static SyntheticSpec load(const std::filesystem::path& path);
  std::string to_text() const;
};

struct Segment {
  std::size_t action = 0;
  std::size_t duration = 0;
  std::size_t attribute = 0;
};

struct LatentProgram {
  std::vector<Segment> segments;

  std::size_t length() const;
  // Number of segments showing `action`.
  std::size_t segment_count(std::size_t action) const;
  // Action and attribute at a frame index.
  const Segment& at_frame(std::size_t frame) const;
};

struct Prototypes {
  std::vector<std::vector<double>> appearance;  // per action
  std::vector<std::vector<double>> motion;      // per action
  std::vector<std::vector<double>> entry;       // per action
  std::vector<std::vector<double>> exit;        // per action
  std::vector<std::vector<double>> attribute;   // per attribute

  static Prototypes generate(const SyntheticSpec& spec);
};

// Throws std::invalid_argument when durations do not add up to clips * frames_per_clip.
VideoFeatures gen_video(const LatentProgram& program, const Prototypes& protos, const SyntheticSpec& spec,
                        double noise, std::mt19937_64& rng);

// The template asks for something this program does not contain.
class UnsatisfiableQuestion : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratedQuestion {
  QuestionTokens tokens;
  std::int64_t answer = 0;                  // label, count, or index of the correct candidate
  std::vector<QuestionTokens> candidates;   // multi-choice only
};

// The fixed vocabulary for a spec.
Vocabulary make_vocabulary(const SyntheticSpec& spec);

// Draws a template instance whose answer is read off the program. When `target`
// is set, only instances with that answer are eligible.
GeneratedQuestion gen_question(const LatentProgram& program, const SyntheticSpec& spec, const Vocabulary& vocab,
                               std::mt19937_64& rng, std::optional<std::int64_t> target = std::nullopt);

// Random program for the spec's task, shaped so that `target` is reachable.
LatentProgram gen_program(const SyntheticSpec& spec, std::int64_t target, std::mt19937_64& rng);

struct SyntheticSample {
  VideoFeatures video;
  GeneratedQuestion question;
  LatentProgram program;
};

// Number of answer classes the generator balances over.
std::size_t balanced_label_count(const SyntheticSpec& spec);

// Sample `index` of a split, derived from its own seed stream.
SyntheticSample gen_sample(const SyntheticSpec& spec, const Prototypes& protos, const Vocabulary& vocab,
                           const std::string& split, std::size_t index);

struct Dataset {
  SyntheticSpec spec;
  Vocabulary vocab;
  std::map<std::string, std::vector<SyntheticSample>> splits;

  const std::vector<SyntheticSample>& split(const std::string& name) const;
};

Dataset generate_dataset(const SyntheticSpec& spec);

// Directory layout: manifest.json, vocab.txt and <split>/NNNNNN.tdump per sample.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Decodes the answer from features alone: nearest prototypes per frame,
// motion residuals for hidden boundaries, then the template rule.
std::int64_t oracle_answer(const SyntheticSample& sample, const Prototypes& protos, const SyntheticSpec& spec,
                           const Vocabulary& vocab);
double oracle_solvability(const std::vector<SyntheticSample>& samples, const Prototypes& protos,
                          const SyntheticSpec& spec, const Vocabulary& vocab);

}  // namespace hcrn
