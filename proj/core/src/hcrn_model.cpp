#include "hcrn/hcrn_model.hpp"

#include <stdexcept>

#include "hcrn/ops.hpp"

namespace hcrn {

namespace {

using Structure = HierarchyConfig::Structure;

std::size_t unit_length(std::size_t n, bool present, const KMaxPolicy& policy) {
  return present ? crn_output_length(n, policy) : n;
}

std::size_t stage_length(std::size_t n, bool motion, bool question, const KMaxPolicy& policy) {
  return unit_length(unit_length(n, motion, policy), question, policy);
}

Tensor drop_axis(const Tensor& x, std::size_t axis) {
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return ops::reshape(x, std::move(s));
}

// Slices along `axis` into separate objects, dropping that axis.
ObjectArray split(const Tensor& x, std::size_t axis) {
  ObjectArray out;
  out.reserve(x.dim(axis));
  for (std::size_t i = 0; i < x.dim(axis); ++i) out.push_back(drop_axis(ops::slice(x, axis, i, i + 1), axis));
  return out;
}

Tensor permuted(const Tensor& x, std::initializer_list<std::size_t> axes) {
  std::vector<std::size_t> a(axes);
  return ops::permute(x, a);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("hierarchy config: " + message);
}

}  // namespace

void HierarchyConfig::validate() const {
  require(d >= 2 && d % 2 == 0, "d must be even and at least 2, got " + std::to_string(d));
  require(d_in >= 1, "d_in must be positive");
  require(t >= 1, "t must be positive");
  require(clips >= 1 && frames_per_clip >= 1, "clips and frames_per_clip must be positive");
  const bool clip_stage = structure != Structure::kOneLevel;
  const bool video_stage = structure != Structure::kOneHalfLevel;
  if (clip_stage) {
    require(frames_per_clip >= 5, "frames_per_clip must be at least 5, got " + std::to_string(frames_per_clip));
  }
  if (structure == Structure::kThreeLevel) {
    require(groups >= 1 && clips % groups == 0,
            "groups (" + std::to_string(groups) + ") must divide clips (" + std::to_string(clips) + ")");
    require(clips_per_group() >= 2, "clips per group must be at least 2, got " + std::to_string(clips_per_group()));
  } else if (video_stage) {
    require(clips >= 5, "clips must be at least 5, got " + std::to_string(clips));
  }
}

std::size_t HierarchyConfig::levels() const {
  switch (structure) {
    case Structure::kTwoLevel: return 2;
    case Structure::kThreeLevel: return 3;
    case Structure::kOneLevel: return 1;
    case Structure::kOneHalfLevel: return 1;
  }
  return 2;
}

std::size_t HierarchyConfig::clip_output_length() const {
  if (structure == Structure::kOneLevel) return 1;
  return stage_length(frames_per_clip, clip_motion, clip_question, k_max);
}

std::size_t HierarchyConfig::subvideo_output_length() const {
  if (structure != Structure::kThreeLevel) return 1;
  return stage_length(clips_per_group(), video_motion, video_question, k_max);
}

std::size_t HierarchyConfig::video_output_length() const {
  switch (structure) {
    case Structure::kOneHalfLevel: return 1;
    case Structure::kThreeLevel: return stage_length(groups, video_motion, video_question, k_max);
    default: return stage_length(clips, video_motion, video_question, k_max);
  }
}

std::size_t HierarchyConfig::pooled_rows() const {
  return clip_output_length() * subvideo_output_length() * video_output_length();
}

HierarchyConfig::Structure HierarchyConfig::parse_structure(const std::string& text) {
  if (text == "2-level") return Structure::kTwoLevel;
  if (text == "3-level") return Structure::kThreeLevel;
  if (text == "1-level") return Structure::kOneLevel;
  if (text == "1.5-level") return Structure::kOneHalfLevel;
  throw std::invalid_argument("structure must be one of 1-level, 1.5-level, 2-level, 3-level, got '" + text + "'");
}

std::string HierarchyConfig::structure_name(Structure s) {
  switch (s) {
    case Structure::kTwoLevel: return "2-level";
    case Structure::kThreeLevel: return "3-level";
    case Structure::kOneLevel: return "1-level";
    case Structure::kOneHalfLevel: return "1.5-level";
  }
  return "2-level";
}

SubsetPlan UnitPlanner::next(std::size_t n) {
  drawn_.push_back(build_plan(n, k_max_.resolve(n), t_, mix_seed(seed_, drawn_.size())));
  return drawn_.back();
}

LevelParams make_level_params(ParamStore& store, const std::string& prefix, std::size_t n, const HierarchyConfig& cfg,
                              bool use_motion, bool use_question, std::mt19937_64& rng) {
  LevelParams p;
  if (use_motion) {
    auto ks = plan_tuple_sizes(n, cfg.k_max.resolve(n));
    p.motion = make_crn_params(store, prefix + ".motion", cfg.d, ks, cfg.gate_motion, rng);
    n = ks.size();
  }
  if (use_question) {
    auto ks = plan_tuple_sizes(n, cfg.k_max.resolve(n));
    p.question = make_crn_params(store, prefix + ".question", cfg.d, ks, cfg.gate_question, rng);
  }
  return p;
}

AttentionParams make_attention_params(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::mt19937_64& rng) {
  AttentionParams p;
  p.rows = make_linear(store, prefix + ".rows", d, d, rng, false);
  p.question = make_linear(store, prefix + ".question", d, d, rng, false);
  p.joint = make_linear(store, prefix + ".joint", 2 * d, d, rng);
  p.score = make_linear(store, prefix + ".score", d, 1, rng);
  return p;
}

HcrnParams make_hcrn_params(ParamStore& store, const HierarchyConfig& cfg, std::size_t vocab,
                            std::size_t embed_dim, std::mt19937_64& rng) {
  cfg.validate();
  const auto s = cfg.structure;
  HcrnParams p;
  p.projection = make_feature_projection(store, "proj", cfg.d_in, cfg.d, rng);
  p.question = make_question_encoder(store, "qenc", vocab, embed_dim, cfg.d, rng);
  if (cfg.video_motion && s != Structure::kOneHalfLevel) {
    p.video_motion = make_lstm(store, "motion_lstm", cfg.d, cfg.d, rng);
  }
  if (cfg.video_motion && s == Structure::kThreeLevel) {
    p.subvideo_motion = make_lstm(store, "subvideo_motion_lstm", cfg.d, cfg.d, rng);
  }
  if (s != Structure::kOneLevel) {
    p.clip = make_level_params(store, "clip", cfg.frames_per_clip, cfg, cfg.clip_motion, cfg.clip_question, rng);
  }
  if (s == Structure::kThreeLevel) {
    p.subvideo =
        make_level_params(store, "subvideo", cfg.clips_per_group(), cfg, cfg.video_motion, cfg.video_question, rng);
  }
  if (s != Structure::kOneHalfLevel) {
    const auto n = s == Structure::kThreeLevel ? cfg.groups : cfg.clips;
    p.video = make_level_params(store, "video", n, cfg, cfg.video_motion, cfg.video_question, rng);
  }
  p.attention = make_attention_params(store, "attn", cfg.d, rng);
  return p;
}

Tensor lift_condition(const Tensor& c, const Shape& item) {
  if (c.shape() == item) return c;
  const auto r = c.rank();
  bool ok = r >= 1 && r <= item.size() && c.shape().back() == item.back();
  for (std::size_t a = 0; ok && a + 1 < r; ++a) ok = c.dim(a) == item[a];
  if (!ok) throw ShapeError("cannot lift conditioning " + to_string(c.shape()) + " onto " + to_string(item));
  Shape lifted(item.size(), 1);
  for (std::size_t a = 0; a + 1 < r; ++a) lifted[a] = item[a];
  lifted.back() = item.back();
  return ops::expand(ops::reshape(c, lifted), item);
}

ObjectArray run_level(const ObjectArray& objects, const Tensor& motion_c, const Tensor& question_c,
                      const LevelParams& p, const HierarchyConfig& cfg, UnitPlanner& planner) {
  ObjectArray current = objects;
  if (p.motion) {
    if (!motion_c.defined()) throw std::invalid_argument("run_level: motion unit present without motion context");
    current = crn_forward(current, motion_c, *p.motion, planner.next(current.size()), cfg.gate_motion);
  }
  if (p.question) {
    if (!question_c.defined()) throw std::invalid_argument("run_level: question unit present without question");
    current = crn_forward(current, question_c, *p.question, planner.next(current.size()), cfg.gate_question);
  }
  return current;
}

Tensor clip_stack(const ObjectArray& frames, const Tensor& f, const Tensor& q, const LevelParams& p,
                  const HierarchyConfig& cfg, UnitPlanner& planner) {
  if (frames.size() < 5) {
    throw std::invalid_argument("clip_stack: need at least 5 frames, got " + std::to_string(frames.size()));
  }
  validate_objects(frames);
  const auto& item = frames.front().shape();
  auto out = run_level(frames, p.motion ? lift_condition(f, item) : Tensor{},
                       p.question ? lift_condition(q, item) : Tensor{}, p, cfg, planner);
  return ops::stack(out);
}

ObjectArray video_stack(const ObjectArray& clips, const Tensor& motion, const Tensor& q, const LevelParams& p,
                        const HierarchyConfig& cfg, UnitPlanner& planner) {
  if (clips.size() < 5 && cfg.structure != Structure::kThreeLevel) {
    throw std::invalid_argument("video_stack: need at least 5 clips, got " + std::to_string(clips.size()));
  }
  validate_objects(clips);
  const auto& item = clips.front().shape();
  return run_level(clips, p.motion ? lift_condition(motion, item) : Tensor{},
                   p.question ? lift_condition(q, item) : Tensor{}, p, cfg, planner);
}

PooledOutput attention_pool(const ObjectArray& objects, const Tensor& q, const AttentionParams& p) {
  if (objects.empty()) throw std::invalid_argument("attention_pool: empty object array");
  validate_objects(objects);
  if (q.rank() == 1) {
    ObjectArray lifted;
    for (const auto& o : objects) {
      Shape s{1};
      s.insert(s.end(), o.shape().begin(), o.shape().end());
      lifted.push_back(ops::reshape(o, s));
    }
    auto out = attention_pool(lifted, ops::reshape(q, {1, q.dim(0)}), p);
    const auto rows = out.rows.dim(1), d = out.rows.dim(2);
    return {ops::reshape(out.pooled, {d}), ops::reshape(out.attention, {rows}), ops::reshape(out.rows, {rows, d})};
  }
  const auto& item = objects.front().shape();
  if (q.rank() != 2 || item.size() < 2 || item.front() != q.dim(0) || item.back() != q.dim(1)) {
    throw ShapeError("attention_pool: objects " + to_string(item) + " do not pair with question " +
                     to_string(q.shape()));
  }
  const auto batch = q.dim(0), d = q.dim(1);
  const auto rows_per_batch = numel(item) / (batch * d) * objects.size();
  auto stacked = ops::stack(objects);
  std::vector<std::size_t> axes(stacked.rank());
  for (std::size_t a = 0; a < axes.size(); ++a) axes[a] = a;
  std::swap(axes[0], axes[1]);
  auto rows = ops::reshape(ops::permute(stacked, axes), {batch, rows_per_batch, d});

  auto wo = p.rows(rows);
  auto wq = ops::reshape(p.question(q), {batch, 1, d});
  const Tensor parts[] = {wo, ops::hadamard(wo, wq)};
  auto joint = ops::elu(p.joint(ops::concat(parts, 2)));
  auto logits = ops::reshape(p.score(joint), {batch, rows_per_batch});
  auto gamma = ops::softmax(logits, 1);
  auto weighted = ops::hadamard(ops::reshape(gamma, {batch, rows_per_batch, 1}), rows);
  return {ops::sum_axis(weighted, 1), gamma, rows};
}

HcrnOutput hcrn_video(const HcrnParams& p, const HierarchyConfig& cfg, const Tensor& appearance,
                      const Tensor& clip_motion, const Tensor& cue, std::uint64_t plan_seed) {
  cfg.validate();
  const auto n = cfg.clips, t = cfg.frames_per_clip, d = cfg.d;
  if (appearance.rank() != 4 || appearance.dim(1) != n || appearance.dim(2) != t || appearance.dim(3) != cfg.d_in) {
    throw ShapeError("hcrn: appearance " + to_string(appearance.shape()) + " does not match [B, " +
                     std::to_string(n) + ", " + std::to_string(t) + ", " + std::to_string(cfg.d_in) + "]");
  }
  const auto batch = appearance.dim(0);
  if (clip_motion.shape() != Shape{batch, n, cfg.d_in}) {
    throw ShapeError("hcrn: clip motion " + to_string(clip_motion.shape()) + " does not pair with appearance " +
                     to_string(appearance.shape()));
  }
  if (cue.shape() != Shape{batch, d}) {
    throw ShapeError("hcrn: linguistic cue " + to_string(cue.shape()) + " is not [" + std::to_string(batch) + ", " +
                     std::to_string(d) + "]");
  }

  auto feats = project_features(appearance, clip_motion, p.projection);
  UnitPlanner planner(plan_seed, cfg.t, cfg.k_max);
  Tensor video_motion;
  if (p.video_motion) video_motion = summarize_motion(feats.motion, *p.video_motion);

  ObjectArray top;
  switch (cfg.structure) {
    case Structure::kTwoLevel: {
      auto clip_sum = clip_stack(split(feats.appearance, 2), feats.motion, cue, p.clip, cfg, planner);  // [H, B, N, d]
      auto clips = split(permuted(clip_sum, {2, 1, 0, 3}), 0);                                         // N x [B, H, d]
      top = video_stack(clips, video_motion, cue, p.video, cfg, planner);
      break;
    }
    case Structure::kThreeLevel: {
      const auto m = cfg.groups, q = cfg.clips_per_group();
      auto clip_sum = clip_stack(split(feats.appearance, 2), feats.motion, cue, p.clip, cfg, planner);
      const auto h = clip_sum.dim(0);
      // [H, B, N, d] -> [N, B, H, d] -> [M, Q, B, H, d] -> [Q, B, M, H, d]
      auto grouped = ops::reshape(permuted(clip_sum, {2, 1, 0, 3}), {m, q, batch, h, d});
      auto members = split(permuted(grouped, {1, 2, 0, 3, 4}), 0);
      const auto& item = members.front().shape();
      Tensor sub_motion, sub_cue;
      if (p.subvideo.motion) {
        auto per_group = ops::reshape(feats.motion, {batch * m, q, d});
        sub_motion = lift_condition(ops::reshape(summarize_motion(per_group, *p.subvideo_motion), {batch, m, d}), item);
      }
      if (p.subvideo.question) sub_cue = lift_condition(cue, item);
      auto sub = run_level(members, sub_motion, sub_cue, p.subvideo, cfg, planner);  // Q' x [B, M, H, d]
      auto subvideos = split(permuted(ops::stack(sub), {2, 1, 0, 3, 4}), 0);          // M x [B, Q', H, d]
      top = video_stack(subvideos, video_motion, cue, p.video, cfg, planner);
      break;
    }
    case Structure::kOneLevel: {
      const auto key = t / 2;
      auto frames = ops::reshape(ops::slice(feats.appearance, 2, key, key + 1), {batch, n, d});
      top = video_stack(split(frames, 1), video_motion, cue, p.video, cfg, planner);
      break;
    }
    case Structure::kOneHalfLevel: {
      auto clip_sum = clip_stack(split(feats.appearance, 2), feats.motion, cue, p.clip, cfg, planner);
      top = split(ops::mean_axis(clip_sum, 2), 0);  // H x [B, d]
      break;
    }
  }
  HcrnOutput out;
  out.pooled = attention_pool(top, cue, p.attention);
  out.condition = cue;
  out.plans = planner.drawn();
  return out;
}

HcrnOutput hcrn_forward(const HcrnParams& p, const HierarchyConfig& cfg, const Tensor& appearance,
                        const Tensor& clip_motion, const std::vector<QuestionTokens>& questions,
                        std::uint64_t plan_seed) {
  if (questions.size() != appearance.dim(0)) {
    throw ShapeError("hcrn: " + std::to_string(questions.size()) + " questions for a batch of " +
                     std::to_string(appearance.dim(0)));
  }
  return hcrn_video(p, cfg, appearance, clip_motion, encode_questions(questions, p.question), plan_seed);
}

namespace {

HcrnOutput forward_single(const VideoFeatures& video, const QuestionTokens& question, const HcrnParams& p,
                          const HierarchyConfig& cfg, std::uint64_t plan_seed) {
  Shape a{1};
  a.insert(a.end(), video.appearance.shape().begin(), video.appearance.shape().end());
  Shape m{1};
  m.insert(m.end(), video.clip_motion.shape().begin(), video.clip_motion.shape().end());
  auto out = hcrn_forward(p, cfg, ops::reshape(video.appearance, a), ops::reshape(video.clip_motion, m), {question},
                          plan_seed);
  const auto rows = out.pooled.rows.dim(1), d = cfg.d;
  out.pooled = {ops::reshape(out.pooled.pooled, {d}), ops::reshape(out.pooled.attention, {rows}),
                ops::reshape(out.pooled.rows, {rows, d})};
  out.condition = ops::reshape(out.condition, {d});
  return out;
}

}  // namespace

HcrnOutput forward_2level(const VideoFeatures& video, const QuestionTokens& question, const HcrnParams& p,
                          const HierarchyConfig& cfg, std::uint64_t plan_seed) {
  if (cfg.structure != Structure::kTwoLevel) throw std::invalid_argument("forward_2level: config is not 2-level");
  return forward_single(video, question, p, cfg, plan_seed);
}

HcrnOutput forward_3level(const VideoFeatures& video, const QuestionTokens& question, const HcrnParams& p,
                          const HierarchyConfig& cfg, std::uint64_t plan_seed) {
  if (cfg.structure != Structure::kThreeLevel) throw std::invalid_argument("forward_3level: config is not 3-level");
  return forward_single(video, question, p, cfg, plan_seed);
}

}  // namespace hcrn
