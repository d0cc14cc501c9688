#pragma once

// Input-side encoders: feature projections, LSTM cells, the question biLSTM
// and the motion summarizer. All entry points accept an optional leading batch
// extent; the recurrences run over the whole batch at once.

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hcrn/params.hpp"
#include "hcrn/tensor.hpp"

namespace hcrn {

struct VideoFeatures {
  Tensor appearance;   // [N, T, d_in]
  Tensor clip_motion;  // [N, d_in]

  std::size_t clips() const { return clip_motion.dim(0); }
  std::size_t frames_per_clip() const { return appearance.dim(1); }
};

using QuestionTokens = std::vector<std::int64_t>;

class UnknownTokenError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct FeatureProjection {
  Linear appearance;  // d_in -> d
  Linear motion;      // d_in -> d
};

FeatureProjection make_feature_projection(ParamStore& store, const std::string& prefix, std::size_t d_in,
                                          std::size_t d, std::mt19937_64& rng);

struct ProjectedFeatures {
  Tensor appearance;  // [..., N, T, d]
  Tensor motion;      // [..., N, d]
};

// Accepts [N, T, d_in] / [N, d_in] or the same with a leading batch extent.
ProjectedFeatures project_features(const Tensor& appearance, const Tensor& clip_motion, const FeatureProjection& p);
inline ProjectedFeatures project_features(const VideoFeatures& v, const FeatureProjection& p) {
  return project_features(v.appearance, v.clip_motion, p);
}

// Gate order in the fused weights is input, forget, cell, output.
struct LstmParams {
  Tensor w_ih;  // [d_x, 4 d_h]
  Tensor w_hh;  // [d_h, 4 d_h]
  Tensor bias;  // [4 d_h]

  std::size_t input_size() const { return w_ih.dim(0); }
  std::size_t hidden_size() const { return w_hh.dim(0); }
};

LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                     std::mt19937_64& rng);

struct LstmState {
  Tensor h;
  Tensor c;
};

// Zero state for `batch` rows, or a rank-1 state when batch is 0.
LstmState zero_state(std::size_t hidden, std::size_t batch = 0);

// i = sigmoid, f = sigmoid, g = tanh, o = sigmoid over x W_ih + h W_hh + b;
// c' = f * c + i * g; h' = o * tanh(c'). x is [d_x] or [B, d_x].
LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& p);

struct QuestionEncoderParams {
  Tensor embedding;  // [V, e]
  LstmParams forward;
  LstmParams backward;

  std::size_t vocabulary_size() const { return embedding.dim(0); }
  std::size_t output_size() const { return forward.hidden_size() + backward.hidden_size(); }
};

// Embeddings are U(-0.08, 0.08); each direction has d/2 hidden units.
QuestionEncoderParams make_question_encoder(ParamStore& store, const std::string& prefix, std::size_t vocab,
                                            std::size_t embed_dim, std::size_t d, std::mt19937_64& rng);

// Final forward state concatenated with the final backward state: [d].
Tensor encode_question(const QuestionTokens& tokens, const QuestionEncoderParams& p);
// Batched form with per-row lengths handled by masking: [B, d].
Tensor encode_questions(const std::vector<QuestionTokens>& batch, const QuestionEncoderParams& p);

// Final hidden state of an LSTM run over the clips in order.
// Accepts a list of [d] vectors, or a tensor [N, d] / [B, N, d].
Tensor summarize_motion(const std::vector<Tensor>& clips, const LstmParams& p);
Tensor summarize_motion(const Tensor& motion, const LstmParams& p);

// Closed token set; id = position in the file (one token per line).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(std::int64_t id) const;
  std::int64_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  QuestionTokens encode(const std::vector<std::string>& words) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int64_t> index_;
};

}  // namespace hcrn
