#pragma once

// Hierarchy of conditional relation units over frames, clips, optional
// sub-videos and the whole video, closed by question-guided attention pooling.
//
// Batched layout: a minibatch of B videos is carried as objects whose leading
// extents are [B, positions...]. One subset plan is drawn per unit per forward
// call and shared by every position in the batch.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hcrn/crn.hpp"
#include "hcrn/encoders.hpp"
#include "hcrn/params.hpp"
#include "hcrn/sampler.hpp"

namespace hcrn {

struct HierarchyConfig {
  enum class Structure {
    kTwoLevel,      // clip units, then video units
    kThreeLevel,    // clip, sub-video and video units
    kOneLevel,      // video units over the middle frame of each clip
    kOneHalfLevel,  // clip units, then a mean over clips
  };

  Structure structure = Structure::kTwoLevel;
  std::size_t clips = 8;            // N
  std::size_t frames_per_clip = 16;  // T
  std::size_t groups = 4;           // M, three-level only
  std::size_t d = 64;
  std::size_t d_in = 32;
  std::size_t t = 2;
  KMaxPolicy k_max;

  // Ablation switches. "video" covers every level above the clips.
  bool clip_motion = true;
  bool video_motion = true;
  bool clip_question = true;
  bool video_question = true;
  bool gate_motion = false;
  bool gate_question = true;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  std::size_t levels() const;
  std::size_t clips_per_group() const { return clips / groups; }  // Q
  // Output lengths of the clip, sub-video and video stages (1 when a stage is absent).
  std::size_t clip_output_length() const;
  std::size_t subvideo_output_length() const;
  std::size_t video_output_length() const;
  // Number of rows H' entering attention pooling.
  std::size_t pooled_rows() const;

  static Structure parse_structure(const std::string& text);
  static std::string structure_name(Structure s);
};

// Draws one plan per unit, in call order, from a per-forward seed.
class UnitPlanner {
 public:
  UnitPlanner(std::uint64_t seed, std::size_t t, KMaxPolicy k_max) : seed_(seed), t_(t), k_max_(k_max) {}
  SubsetPlan next(std::size_t n);
  const std::vector<SubsetPlan>& drawn() const { return drawn_; }

 private:
  std::uint64_t seed_;
  std::size_t t_;
  KMaxPolicy k_max_;
  std::vector<SubsetPlan> drawn_;
};

// A motion-conditioned unit followed by a question-conditioned unit; either may be absent.
struct LevelParams {
  std::optional<CrnParams> motion;
  std::optional<CrnParams> question;
};

LevelParams make_level_params(ParamStore& store, const std::string& prefix, std::size_t n, const HierarchyConfig& cfg,
                              bool use_motion, bool use_question, std::mt19937_64& rng);

struct AttentionParams {
  Linear rows;      // W_o', no bias
  Linear question;  // W_q, no bias
  Linear joint;     // W_I, [2d -> d]
  Linear score;     // W_I', [d -> 1]
};

AttentionParams make_attention_params(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::mt19937_64& rng);

struct HcrnParams {
  FeatureProjection projection;
  QuestionEncoderParams question;
  std::optional<LstmParams> video_motion;
  std::optional<LstmParams> subvideo_motion;
  LevelParams clip;
  LevelParams subvideo;
  LevelParams video;
  AttentionParams attention;
};

HcrnParams make_hcrn_params(ParamStore& store, const HierarchyConfig& cfg, std::size_t vocab,
                            std::size_t embed_dim, std::mt19937_64& rng);

// Reshapes a conditioning vector [lead..., d] and broadcasts it over the
// remaining positional extents of `item` (which starts with the same lead extents).
Tensor lift_condition(const Tensor& c, const Shape& item);

// Runs a level's units in order; conditioning tensors must match the item shape.
ObjectArray run_level(const ObjectArray& objects, const Tensor& motion_c, const Tensor& question_c,
                      const LevelParams& p, const HierarchyConfig& cfg, UnitPlanner& planner);

// Clip level over T frame objects [..., d]; f and q are [..., d] with the
// frames' leading extents. Returns the clip summary [T', ..., d].
Tensor clip_stack(const ObjectArray& frames, const Tensor& f, const Tensor& q, const LevelParams& p,
                  const HierarchyConfig& cfg, UnitPlanner& planner);

// Video level over N clip summaries [..., H, d]; motion and q are [..., d].
ObjectArray video_stack(const ObjectArray& clips, const Tensor& motion, const Tensor& q, const LevelParams& p,
                        const HierarchyConfig& cfg, UnitPlanner& planner);

struct PooledOutput {
  Tensor pooled;     // õ: [d] or [B, d]
  Tensor attention;  // γ: [H'] or [B, H']
  Tensor rows;       // o': [H', d] or [B, H', d]
};

// Objects are [pos..., d] with q [d], or [B, pos..., d] with q [B, d].
PooledOutput attention_pool(const ObjectArray& objects, const Tensor& q, const AttentionParams& p);

struct HcrnOutput {
  PooledOutput pooled;
  Tensor condition;  // the linguistic cue used, [B, d]
  std::vector<SubsetPlan> plans;
};

// Full forward over a minibatch: appearance [B, N, T, d_in], clip motion
// [B, N, d_in] and an encoded linguistic cue [B, d].
HcrnOutput hcrn_video(const HcrnParams& p, const HierarchyConfig& cfg, const Tensor& appearance,
                      const Tensor& clip_motion, const Tensor& cue, std::uint64_t plan_seed);

// Encodes the questions, then runs hcrn_video.
HcrnOutput hcrn_forward(const HcrnParams& p, const HierarchyConfig& cfg, const Tensor& appearance,
                        const Tensor& clip_motion, const std::vector<QuestionTokens>& questions,
                        std::uint64_t plan_seed);

// Single-sample entry points; they require the matching structure.
HcrnOutput forward_2level(const VideoFeatures& video, const QuestionTokens& question, const HcrnParams& p,
                          const HierarchyConfig& cfg, std::uint64_t plan_seed);
HcrnOutput forward_3level(const VideoFeatures& video, const QuestionTokens& question, const HcrnParams& p,
                          const HierarchyConfig& cfg, std::uint64_t plan_seed);

}  // namespace hcrn
