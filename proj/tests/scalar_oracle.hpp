#pragma once

// Loop-only reference implementations over std::vector<double>, used to check
// composed model outputs without going through the tensor engine.

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "hcrn/crn.hpp"
#include "hcrn/encoders.hpp"
#include "hcrn/hcrn_model.hpp"

namespace hcrn::oracle {

using Vec = std::vector<double>;

inline double elu(double x) { return x > 0 ? x : std::exp(x) - 1.0; }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec linear(const Vec& x, const Tensor& w, const Tensor& b) {
  const auto in = w.dim(0), out = w.dim(1);
  Vec y(out, 0.0);
  for (std::size_t j = 0; j < out; ++j) {
    double a = b.defined() ? b[j] : 0.0;
    for (std::size_t i = 0; i < in; ++i) a += x[i] * w[i * out + j];
    y[j] = a;
  }
  return y;
}
inline Vec linear(const Vec& x, const Linear& l) { return linear(x, l.weight, l.bias); }

inline Vec cat(Vec a, const Vec& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline Vec h(const Vec& x, const Vec& c, const Linear& main, const Linear* gate) {
  auto joint = cat(x, c);
  auto out = linear(joint, main);
  for (auto& v : out) v = elu(v);
  if (gate) {
    auto g = linear(joint, *gate);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] *= sigmoid(g[j]);
  }
  return out;
}

// Exhaustive unit: every subset of every planned tuple size, objects are flat vectors.
inline std::vector<Vec> crn(const std::vector<Vec>& objects, const Vec& c, const CrnParams& p, std::size_t k_max,
                            bool gated) {
  const auto n = objects.size();
  const auto d = c.size();
  std::vector<Vec> result;
  for (auto k : plan_tuple_sizes(n, k_max)) {
    Vec acc(d, 0.0);
    std::size_t count = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
      Vec g(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask & (1u << i)) {
          for (std::size_t j = 0; j < d; ++j) g[j] += objects[i][j] / static_cast<double>(k);
        }
      }
      auto r = h(g, c, p.main.at(k), gated ? &p.gate.at(k) : nullptr);
      for (std::size_t j = 0; j < d; ++j) acc[j] += r[j];
      ++count;
    }
    for (auto& v : acc) v /= static_cast<double>(count);
    result.push_back(acc);
  }
  return result;
}

// Objects with positional rows: the unit acts on each row independently.
using Rows = std::vector<Vec>;
inline std::vector<Rows> crn_rows(const std::vector<Rows>& objects, const Vec& c, const CrnParams& p,
                                  std::size_t k_max, bool gated) {
  const auto rows = objects.front().size();
  std::vector<Rows> out;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<Vec> column;
    for (const auto& o : objects) column.push_back(o[r]);
    auto rel = crn(column, c, p, k_max, gated);
    if (out.empty()) out.assign(rel.size(), Rows(rows));
    for (std::size_t k = 0; k < rel.size(); ++k) out[k][r] = rel[k];
  }
  return out;
}

inline std::pair<Vec, Vec> lstm(const Vec& x, const Vec& hs, const Vec& cs, const LstmParams& p) {
  const auto dh = hs.size();
  auto pre = linear(x, p.w_ih, p.bias);
  auto rec = linear(hs, p.w_hh, Tensor{});
  Vec h2(dh), c2(dh);
  for (std::size_t j = 0; j < dh; ++j) {
    const double ig = sigmoid(pre[j] + rec[j]), fg = sigmoid(pre[dh + j] + rec[dh + j]),
                 gg = std::tanh(pre[2 * dh + j] + rec[2 * dh + j]), og = sigmoid(pre[3 * dh + j] + rec[3 * dh + j]);
    c2[j] = fg * cs[j] + ig * gg;
    h2[j] = og * std::tanh(c2[j]);
  }
  return {h2, c2};
}

inline Vec lstm_final(const std::vector<Vec>& xs, const LstmParams& p) {
  Vec hs(p.hidden_size(), 0.0), cs(p.hidden_size(), 0.0);
  for (const auto& x : xs) std::tie(hs, cs) = lstm(x, hs, cs, p);
  return hs;
}

inline Vec question(const QuestionTokens& tokens, const QuestionEncoderParams& p) {
  const auto e = p.embedding.dim(1);
  std::vector<Vec> xs;
  for (auto id : tokens) {
    auto row = p.embedding.data().subspan(static_cast<std::size_t>(id) * e, e);
    xs.emplace_back(row.begin(), row.end());
  }
  auto fwd = lstm_final(xs, p.forward);
  std::vector<Vec> rev(xs.rbegin(), xs.rend());
  return cat(fwd, lstm_final(rev, p.backward));
}

struct Pooled {
  Vec pooled;
  Vec gamma;
};

inline Pooled attention(const Rows& rows, const Vec& q, const AttentionParams& p) {
  auto wq = linear(q, p.question);
  Vec logits;
  for (const auto& o : rows) {
    auto wo = linear(o, p.rows);
    Vec prod(wo.size());
    for (std::size_t j = 0; j < wo.size(); ++j) prod[j] = wo[j] * wq[j];
    auto joint = linear(cat(wo, prod), p.joint);
    for (auto& v : joint) v = elu(v);
    logits.push_back(linear(joint, p.score)[0]);
  }
  double mx = logits[0];
  for (auto v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (auto& v : logits) z += (v = std::exp(v - mx));
  Pooled out{Vec(q.size(), 0.0), {}};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.gamma.push_back(logits[r] / z);
    for (std::size_t j = 0; j < q.size(); ++j) out.pooled[j] += out.gamma[r] * rows[r][j];
  }
  return out;
}

// Two-level forward for one sample with exhaustive plans.
// appearance[i][j] is frame j of clip i, motion[i] the clip motion vector.
inline Pooled two_level(const std::vector<std::vector<Vec>>& appearance, const std::vector<Vec>& motion,
                        const QuestionTokens& tokens, const HcrnParams& p, const HierarchyConfig& cfg) {
  auto q = question(tokens, p.question);
  const auto n = appearance.size();
  std::vector<Vec> f;
  for (const auto& m : motion) f.push_back(linear(m, p.projection.motion));
  std::vector<Rows> clips;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Vec> frames;
    for (const auto& v : appearance[i]) frames.push_back(linear(v, p.projection.appearance));
    auto mid = crn(frames, f[i], *p.clip.motion, cfg.k_max.resolve(frames.size()), cfg.gate_motion);
    auto top = crn(mid, q, *p.clip.question, cfg.k_max.resolve(mid.size()), cfg.gate_question);
    clips.push_back(top);
  }
  auto vm = lstm_final(f, *p.video_motion);
  auto mid = crn_rows(clips, vm, *p.video.motion, cfg.k_max.resolve(clips.size()), cfg.gate_motion);
  auto top = crn_rows(mid, q, *p.video.question, cfg.k_max.resolve(mid.size()), cfg.gate_question);
  Rows rows;
  for (const auto& o : top) rows.insert(rows.end(), o.begin(), o.end());
  return attention(rows, q, p.attention);
}

}  // namespace hcrn::oracle
