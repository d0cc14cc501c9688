#include "hcrn/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "hcrn/ops.hpp"

namespace hcrn {

namespace {

// Keeps the new state on rows where mask is 1 and the old state elsewhere.
Tensor blend(const Tensor& mask, const Tensor& fresh, const Tensor& old) {
  auto keep = ops::add_scalar(ops::scale(mask, -1.0), 1.0);
  return ops::add(ops::hadamard(mask, fresh), ops::hadamard(keep, old));
}

LstmState blend(const Tensor& mask, const LstmState& fresh, const LstmState& old) {
  return {blend(mask, fresh.h, old.h), blend(mask, fresh.c, old.c)};
}

Tensor drop_axis(const Tensor& x, std::size_t axis) {
  Shape s = x.shape();
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return ops::reshape(x, std::move(s));
}

}  // namespace

FeatureProjection make_feature_projection(ParamStore& store, const std::string& prefix, std::size_t d_in,
                                          std::size_t d, std::mt19937_64& rng) {
  return {make_linear(store, prefix + ".appearance", d_in, d, rng),
          make_linear(store, prefix + ".motion", d_in, d, rng)};
}

ProjectedFeatures project_features(const Tensor& appearance, const Tensor& clip_motion, const FeatureProjection& p) {
  const auto d_in = p.appearance.in_features();
  if (appearance.rank() < 3 || appearance.shape().back() != d_in) {
    throw ShapeError("project_features: appearance " + to_string(appearance.shape()) + " needs [..., N, T, " +
                     std::to_string(d_in) + "]");
  }
  if (clip_motion.rank() != appearance.rank() - 1 || clip_motion.shape().back() != p.motion.in_features()) {
    throw ShapeError("project_features: clip motion " + to_string(clip_motion.shape()) + " does not pair with " +
                     to_string(appearance.shape()));
  }
  for (std::size_t a = 0; a + 2 < appearance.rank(); ++a) {
    if (appearance.dim(a) != clip_motion.dim(a)) {
      throw ShapeError("project_features: clip counts differ between " + to_string(appearance.shape()) + " and " +
                       to_string(clip_motion.shape()));
    }
  }
  return {p.appearance(appearance), p.motion(clip_motion)};
}

LstmParams make_lstm(ParamStore& store, const std::string& prefix, std::size_t input, std::size_t hidden,
                     std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  LstmParams p;
  p.w_ih = store.create(prefix + ".w_ih", {input, 4 * hidden}, bound, rng);
  p.w_hh = store.create(prefix + ".w_hh", {hidden, 4 * hidden}, bound, rng);
  p.bias = store.create(prefix + ".bias", {4 * hidden}, bound, rng);
  return p;
}

LstmState zero_state(std::size_t hidden, std::size_t batch) {
  Shape s = batch == 0 ? Shape{hidden} : Shape{batch, hidden};
  return {Tensor::zeros(s), Tensor::zeros(s)};
}

LstmState lstm_step(const Tensor& x, const LstmState& state, const LstmParams& p) {
  const auto dh = p.hidden_size();
  if (x.rank() == 0 || x.shape().back() != p.input_size()) {
    throw ShapeError("lstm_step: input " + to_string(x.shape()) + " does not have extent " +
                     std::to_string(p.input_size()));
  }
  Shape expect = x.shape();
  expect.back() = dh;
  if (state.h.shape() != expect || state.c.shape() != expect) {
    throw ShapeError("lstm_step: state " + to_string(state.h.shape()) + "/" + to_string(state.c.shape()) +
                     " does not match " + to_string(expect));
  }
  const auto axis = x.rank() - 1;
  auto gates = ops::add(ops::linear(x, p.w_ih, p.bias), ops::linear(state.h, p.w_hh));
  auto i = ops::sigmoid(ops::slice(gates, axis, 0, dh));
  auto f = ops::sigmoid(ops::slice(gates, axis, dh, 2 * dh));
  auto g = ops::tanh(ops::slice(gates, axis, 2 * dh, 3 * dh));
  auto o = ops::sigmoid(ops::slice(gates, axis, 3 * dh, 4 * dh));
  auto c = ops::add(ops::hadamard(f, state.c), ops::hadamard(i, g));
  return {ops::hadamard(o, ops::tanh(c)), c};
}

QuestionEncoderParams make_question_encoder(ParamStore& store, const std::string& prefix, std::size_t vocab,
                                            std::size_t embed_dim, std::size_t d, std::mt19937_64& rng) {
  if (d % 2 != 0) throw std::invalid_argument("question encoder: d must be even, got " + std::to_string(d));
  if (vocab == 0 || embed_dim == 0) throw std::invalid_argument("question encoder: empty vocabulary or embedding");
  QuestionEncoderParams p;
  p.embedding = store.create(prefix + ".embedding", {vocab, embed_dim}, 0.08, rng);
  p.forward = make_lstm(store, prefix + ".fwd", embed_dim, d / 2, rng);
  p.backward = make_lstm(store, prefix + ".bwd", embed_dim, d / 2, rng);
  return p;
}

Tensor encode_question(const QuestionTokens& tokens, const QuestionEncoderParams& p) {
  auto q = encode_questions({tokens}, p);
  return ops::reshape(q, {q.dim(1)});
}

Tensor encode_questions(const std::vector<QuestionTokens>& batch, const QuestionEncoderParams& p) {
  if (batch.empty()) throw std::invalid_argument("encode_questions: empty batch");
  const auto vocab = static_cast<std::int64_t>(p.vocabulary_size());
  std::size_t longest = 0;
  bool ragged = false;
  for (const auto& tokens : batch) {
    if (tokens.empty()) throw std::invalid_argument("encode_questions: empty question");
    for (auto id : tokens) {
      if (id < 0 || id >= vocab) {
        throw UnknownTokenError("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocab));
      }
    }
    if (longest != 0 && tokens.size() != longest) ragged = true;
    longest = std::max(longest, tokens.size());
  }
  const auto rows = batch.size();

  std::vector<Tensor> steps(longest), masks(longest);
  for (std::size_t t = 0; t < longest; ++t) {
    std::vector<std::int64_t> ids(rows, 0);
    std::vector<double> m(rows, 0.0);
    for (std::size_t b = 0; b < rows; ++b) {
      if (t < batch[b].size()) {
        ids[b] = batch[b][t];
        m[b] = 1.0;
      }
    }
    steps[t] = ops::embedding(p.embedding, ids);
    if (ragged) masks[t] = Tensor::from({rows, 1}, std::move(m));
  }

  auto fwd = zero_state(p.forward.hidden_size(), rows);
  for (std::size_t t = 0; t < longest; ++t) {
    auto next = lstm_step(steps[t], fwd, p.forward);
    fwd = ragged ? blend(masks[t], next, fwd) : next;
  }
  // Rows shorter than the longest question stay at the zero state until their last token.
  auto bwd = zero_state(p.backward.hidden_size(), rows);
  for (std::size_t t = longest; t-- > 0;) {
    auto next = lstm_step(steps[t], bwd, p.backward);
    bwd = ragged ? blend(masks[t], next, bwd) : next;
  }
  const Tensor parts[] = {fwd.h, bwd.h};
  return ops::concat(parts, 1);
}

Tensor summarize_motion(const std::vector<Tensor>& clips, const LstmParams& p) {
  if (clips.empty()) throw std::invalid_argument("summarize_motion: no clips");
  auto state = zero_state(p.hidden_size(), clips.front().rank() == 2 ? clips.front().dim(0) : 0);
  for (const auto& x : clips) state = lstm_step(x, state, p);
  return state.h;
}

Tensor summarize_motion(const Tensor& motion, const LstmParams& p) {
  if (motion.rank() != 2 && motion.rank() != 3) {
    throw ShapeError("summarize_motion: expected [N, d] or [B, N, d], got " + to_string(motion.shape()));
  }
  const auto axis = motion.rank() - 2;
  if (motion.dim(axis) == 0) throw std::invalid_argument("summarize_motion: no clips");
  std::vector<Tensor> clips;
  for (std::size_t i = 0; i < motion.dim(axis); ++i) clips.push_back(drop_axis(ops::slice(motion, axis, i, i + 1), axis));
  return summarize_motion(clips, p);
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw std::invalid_argument("vocabulary: empty token at line " + std::to_string(i + 1));
    if (!index_.emplace(tokens_[i], static_cast<std::int64_t>(i)).second) {
      throw std::invalid_argument("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw UnknownTokenError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::int64_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw UnknownTokenError("unknown token '" + token + "'");
  return it->second;
}

QuestionTokens Vocabulary::encode(const std::vector<std::string>& words) const {
  QuestionTokens ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw std::runtime_error("failed writing vocabulary " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

}  // namespace hcrn
