#pragma once

// Answer heads and their losses. Heads accept [d] or batched [B, d] inputs.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hcrn/params.hpp"
#include "hcrn/tensor.hpp"

namespace hcrn {

struct AnswerSpace {
  enum class Kind { kOpenEnded, kCount, kMultiChoice };
  Kind kind = Kind::kOpenEnded;
  std::size_t labels = 2;      // open-ended |A|
  std::int64_t lo = 0;         // count range
  std::int64_t hi = 0;
  std::size_t candidates = 2;  // multi-choice

  void validate() const;
  // "openended:<labels>", "count:<lo>:<hi>" or "multichoice:<candidates>".
  std::string to_string() const;
  static AnswerSpace parse(const std::string& text);

  static AnswerSpace open_ended(std::size_t labels) { return {Kind::kOpenEnded, labels, 0, 0, 2}; }
  static AnswerSpace count(std::int64_t lo, std::int64_t hi) { return {Kind::kCount, 2, lo, hi, 2}; }
  static AnswerSpace multi_choice(std::size_t candidates) { return {Kind::kMultiChoice, 2, 0, 0, candidates}; }
};

// Shared trunk of the open-ended and count heads:
// y = ELU(W_o [õ, W_q q + b] + b), y' = ELU(W_y y + b).
struct ClassifierTrunk {
  Linear question;  // d -> d
  Linear joint;     // 2d -> d
  Linear hidden;    // d -> d
};

struct OpenEndedHead {
  ClassifierTrunk trunk;
  Linear output;  // d -> |A|
};

struct CountHead {
  ClassifierTrunk trunk;
  Linear output;  // d -> 1
};

// y = [õ_q, õ_a, W_q q + b, W_a a + b], y' = ELU(W_y y + b), s = W_y' y' + b.
struct MultiChoiceHead {
  Linear question;  // d -> d
  Linear answer;    // d -> d
  Linear hidden;    // 4d -> d
  Linear output;    // d -> 1
};

OpenEndedHead make_openended_head(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t labels,
                                  std::mt19937_64& rng);
CountHead make_count_head(ParamStore& store, const std::string& prefix, std::size_t d, std::mt19937_64& rng);
MultiChoiceHead make_multichoice_head(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::mt19937_64& rng);

Tensor trunk_forward(const Tensor& pooled, const Tensor& q, const ClassifierTrunk& p);

// Pre-softmax scores [..., |A|]; openended_probs applies the softmax.
Tensor openended_logits(const Tensor& pooled, const Tensor& q, const OpenEndedHead& p);
Tensor openended_probs(const Tensor& pooled, const Tensor& q, const OpenEndedHead& p);

// Unrounded regression output, [] or [B].
Tensor count_raw(const Tensor& pooled, const Tensor& q, const CountHead& p);

// Round half away from zero, then clamp to [lo, hi].
std::int64_t round_count(double raw, std::int64_t lo, std::int64_t hi);

struct CountPrediction {
  Tensor raw;
  std::vector<std::int64_t> rounded;
};
CountPrediction count_predict(const Tensor& pooled, const Tensor& q, const CountHead& p, std::int64_t lo,
                              std::int64_t hi);

// pooled_q [..., d] (one per sample), pooled_a [..., C, d] (one per candidate),
// q [..., d], a [..., C, d]. Returns scores [..., C].
Tensor multichoice_scores(const Tensor& pooled_q, const Tensor& pooled_a, const Tensor& q, const Tensor& a,
                          const MultiChoiceHead& p);

class TargetError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Batch means of the per-sample losses. Targets are validated against the score extent.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);
// -log p[target] from probabilities, for rows [B, |A|].
Tensor cross_entropy_from_probs(const Tensor& probs, std::span<const std::size_t> targets);
Tensor mse_loss(const Tensor& raw, std::span<const double> targets);
// Sum over incorrect candidates of max(0, 1 + s_n - s_p).
Tensor hinge_loss(const Tensor& scores, std::span<const std::size_t> correct);

std::vector<std::size_t> argmax_rows(const Tensor& scores);

}  // namespace hcrn
