#include "hcrn/decoders.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hcrn/ops.hpp"

namespace hcrn {

namespace {

std::size_t last_axis(const Tensor& x) { return x.rank() - 1; }

Tensor drop_last(const Tensor& x) {
  Shape s = x.shape();
  s.pop_back();
  return ops::reshape(x, std::move(s));
}

// Views [A] as [1, A] so losses can treat single samples as a batch of one.
Tensor as_rows(const Tensor& x, const char* op) {
  if (x.rank() == 1) return ops::reshape(x, {1, x.dim(0)});
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": expected [A] or [B, A], got " + to_string(x.shape()));
  return x;
}

void check_targets(const Tensor& rows, std::size_t count, const char* op) {
  if (rows.dim(0) != count) {
    throw ShapeError(std::string(op) + ": " + std::to_string(count) + " targets for " + std::to_string(rows.dim(0)) +
                     " rows");
  }
}

void check_indices(std::span<const std::size_t> targets, std::size_t extent, const char* op) {
  for (auto t : targets) {
    if (t >= extent) {
      throw TargetError(std::string(op) + ": target " + std::to_string(t) + " outside [0, " +
                        std::to_string(extent) + ")");
    }
  }
}

ClassifierTrunk make_trunk(ParamStore& store, const std::string& prefix, std::size_t d, std::mt19937_64& rng) {
  return {make_linear(store, prefix + ".question", d, d, rng), make_linear(store, prefix + ".joint", 2 * d, d, rng),
          make_linear(store, prefix + ".hidden", d, d, rng)};
}

}  // namespace

void AnswerSpace::validate() const {
  switch (kind) {
    case Kind::kOpenEnded:
      if (labels < 2) throw std::invalid_argument("answer space: open-ended needs at least 2 labels");
      break;
    case Kind::kCount:
      if (lo > hi) throw std::invalid_argument("answer space: count range has lo > hi");
      break;
    case Kind::kMultiChoice:
      if (candidates < 2) throw std::invalid_argument("answer space: multi-choice needs at least 2 candidates");
      break;
  }
}

std::string AnswerSpace::to_string() const {
  switch (kind) {
    case Kind::kOpenEnded: return "openended:" + std::to_string(labels);
    case Kind::kCount: return "count:" + std::to_string(lo) + ":" + std::to_string(hi);
    case Kind::kMultiChoice: return "multichoice:" + std::to_string(candidates);
  }
  return "";
}

AnswerSpace AnswerSpace::parse(const std::string& text) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto colon = text.find(':', start);
    parts.push_back(text.substr(start, colon - start));
    if (colon == std::string::npos) break;
    start = colon + 1;
  }
  auto number = [&](const std::string& s) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw std::invalid_argument("answer space: bad number '" + s + "' in '" + text + "'");
    return v;
  };
  AnswerSpace a;
  if (parts[0] == "openended" && parts.size() == 2) {
    a = open_ended(static_cast<std::size_t>(std::max(0LL, number(parts[1]))));
  } else if (parts[0] == "count" && parts.size() == 3) {
    a = count(number(parts[1]), number(parts[2]));
  } else if (parts[0] == "multichoice" && parts.size() == 2) {
    a = multi_choice(static_cast<std::size_t>(std::max(0LL, number(parts[1]))));
  } else {
    throw std::invalid_argument("answer space must be openended:<n>, count:<lo>:<hi> or multichoice:<n>, got '" +
                                text + "'");
  }
  a.validate();
  return a;
}

OpenEndedHead make_openended_head(ParamStore& store, const std::string& prefix, std::size_t d, std::size_t labels,
                                  std::mt19937_64& rng) {
  auto trunk = make_trunk(store, prefix, d, rng);
  return {trunk, make_linear(store, prefix + ".output", d, labels, rng)};
}

CountHead make_count_head(ParamStore& store, const std::string& prefix, std::size_t d, std::mt19937_64& rng) {
  auto trunk = make_trunk(store, prefix, d, rng);
  return {trunk, make_linear(store, prefix + ".output", d, 1, rng)};
}

MultiChoiceHead make_multichoice_head(ParamStore& store, const std::string& prefix, std::size_t d,
                                      std::mt19937_64& rng) {
  MultiChoiceHead p;
  p.question = make_linear(store, prefix + ".question", d, d, rng);
  p.answer = make_linear(store, prefix + ".answer", d, d, rng);
  p.hidden = make_linear(store, prefix + ".hidden", 4 * d, d, rng);
  p.output = make_linear(store, prefix + ".output", d, 1, rng);
  return p;
}

Tensor trunk_forward(const Tensor& pooled, const Tensor& q, const ClassifierTrunk& p) {
  if (pooled.shape() != q.shape()) {
    throw ShapeError("decoder: pooled " + to_string(pooled.shape()) + " and question " + to_string(q.shape()) +
                     " differ");
  }
  const Tensor parts[] = {pooled, p.question(q)};
  auto y = ops::elu(p.joint(ops::concat(parts, last_axis(pooled))));
  return ops::elu(p.hidden(y));
}

Tensor openended_logits(const Tensor& pooled, const Tensor& q, const OpenEndedHead& p) {
  return p.output(trunk_forward(pooled, q, p.trunk));
}

Tensor openended_probs(const Tensor& pooled, const Tensor& q, const OpenEndedHead& p) {
  auto logits = openended_logits(pooled, q, p);
  return ops::softmax(logits, last_axis(logits));
}

Tensor count_raw(const Tensor& pooled, const Tensor& q, const CountHead& p) {
  return drop_last(p.output(trunk_forward(pooled, q, p.trunk)));
}

std::int64_t round_count(double raw, std::int64_t lo, std::int64_t hi) {
  if (std::isnan(raw)) throw std::domain_error("round_count: NaN count");
  const double r = std::round(raw);  // halves go away from zero
  if (r <= static_cast<double>(lo)) return lo;
  if (r >= static_cast<double>(hi)) return hi;
  return static_cast<std::int64_t>(r);
}

CountPrediction count_predict(const Tensor& pooled, const Tensor& q, const CountHead& p, std::int64_t lo,
                              std::int64_t hi) {
  CountPrediction out{count_raw(pooled, q, p), {}};
  for (auto v : out.raw.data()) out.rounded.push_back(round_count(v, lo, hi));
  return out;
}

Tensor multichoice_scores(const Tensor& pooled_q, const Tensor& pooled_a, const Tensor& q, const Tensor& a,
                          const MultiChoiceHead& p) {
  if (pooled_a.rank() != pooled_q.rank() + 1 || pooled_a.shape() != a.shape() || pooled_q.shape() != q.shape()) {
    throw ShapeError("multichoice: shapes " + to_string(pooled_q.shape()) + ", " + to_string(pooled_a.shape()) +
                     ", " + to_string(q.shape()) + ", " + to_string(a.shape()) + " do not pair");
  }
  const auto& item = pooled_a.shape();
  if (item[item.size() - 2] == 0) throw std::invalid_argument("multichoice: empty candidate list");
  Shape lifted = pooled_q.shape();
  lifted.insert(lifted.end() - 1, 1);
  auto spread = [&](const Tensor& x) { return ops::expand(ops::reshape(x, lifted), item); };
  const Tensor parts[] = {spread(pooled_q), pooled_a, spread(p.question(q)), p.answer(a)};
  auto y = ops::elu(p.hidden(ops::concat(parts, item.size() - 1)));
  return drop_last(p.output(y));
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  auto rows = as_rows(logits, "cross_entropy");
  check_targets(rows, targets.size(), "cross_entropy");
  check_indices(targets, rows.dim(1), "cross_entropy");
  return ops::scale(ops::mean(ops::pick(ops::log_softmax(rows, 1), targets)), -1.0);
}

Tensor cross_entropy_from_probs(const Tensor& probs, std::span<const std::size_t> targets) {
  auto rows = as_rows(probs, "cross_entropy_from_probs");
  check_targets(rows, targets.size(), "cross_entropy_from_probs");
  check_indices(targets, rows.dim(1), "cross_entropy_from_probs");
  return ops::scale(ops::mean(ops::log(ops::pick(rows, targets))), -1.0);
}

Tensor mse_loss(const Tensor& raw, std::span<const double> targets) {
  auto flat = ops::reshape(raw, {raw.numel()});
  if (flat.numel() != targets.size()) {
    throw ShapeError("mse_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(raw.numel()) +
                     " predictions");
  }
  for (auto t : targets) {
    if (!std::isfinite(t)) throw TargetError("mse_loss: non-finite target");
  }
  auto diff = ops::sub(flat, Tensor::vector({targets.begin(), targets.end()}));
  return ops::mean(ops::hadamard(diff, diff));
}

Tensor hinge_loss(const Tensor& scores, std::span<const std::size_t> correct) {
  auto rows = as_rows(scores, "hinge_loss");
  check_targets(rows, correct.size(), "hinge_loss");
  const auto b = rows.dim(0), c = rows.dim(1);
  check_indices(correct, c, "hinge_loss");
  auto positive = ops::reshape(ops::pick(rows, correct), {b, 1});
  auto margins = ops::relu(ops::add_scalar(ops::sub(rows, positive), 1.0));
  std::vector<double> mask(b * c, 1.0);
  for (std::size_t i = 0; i < b; ++i) mask[i * c + correct[i]] = 0.0;
  auto per_sample = ops::sum(ops::hadamard(margins, Tensor::from({b, c}, std::move(mask))));
  return ops::scale(per_sample, 1.0 / static_cast<double>(b));
}

std::vector<std::size_t> argmax_rows(const Tensor& scores) {
  auto rows = scores.rank() == 1 ? ops::reshape(scores, {1, scores.dim(0)}) : scores;
  if (rows.rank() != 2 || rows.dim(1) == 0) throw ShapeError("argmax_rows: expected [B, A], got " + to_string(scores.shape()));
  std::vector<std::size_t> out;
  const auto a = rows.dim(1);
  auto d = rows.data();
  for (std::size_t i = 0; i < rows.dim(0); ++i) {
    auto begin = d.begin() + static_cast<std::ptrdiff_t>(i * a);
    out.push_back(static_cast<std::size_t>(std::max_element(begin, begin + static_cast<std::ptrdiff_t>(a)) - begin));
  }
  return out;
}

}  // namespace hcrn
