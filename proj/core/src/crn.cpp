#include "hcrn/crn.hpp"

#include <algorithm>
#include <stdexcept>

#include "hcrn/ops.hpp"

namespace hcrn {

void validate_objects(const ObjectArray& objects) {
  if (objects.empty()) throw ShapeError("object array is empty");
  const auto& ref = objects.front();
  if (!ref.defined() || ref.rank() == 0) throw ShapeError("objects must have a feature extent");
  for (const auto& o : objects) {
    if (!o.defined() || o.shape() != ref.shape()) {
      throw ShapeError("object array is not homogeneous: " + to_string(ref.shape()) + " vs " +
                       (o.defined() ? to_string(o.shape()) : std::string("<undefined>")));
    }
  }
}

std::size_t KMaxPolicy::resolve(std::size_t n) const {
  const std::size_t cap = std::max<std::size_t>(n > 0 ? n - 1 : 0, 1);
  switch (kind) {
    case Kind::kAllButOne: return cap;
    case Kind::kHalf: return std::clamp<std::size_t>(n / 2, 1, cap);
    case Kind::kFixed: return std::clamp<std::size_t>(value, 1, cap);
  }
  return cap;
}

std::string KMaxPolicy::to_string() const {
  switch (kind) {
    case Kind::kAllButOne: return "n-1";
    case Kind::kHalf: return "n/2";
    case Kind::kFixed: return std::to_string(value);
  }
  return "n-1";
}

KMaxPolicy KMaxPolicy::parse(const std::string& text) {
  if (text == "n-1") return {Kind::kAllButOne, 0};
  if (text == "n/2") return {Kind::kHalf, 0};
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || text.empty() || v == 0) {
    throw std::invalid_argument("k_max must be 'n-1', 'n/2' or a positive integer, got '" + text + "'");
  }
  return {Kind::kFixed, v};
}

std::vector<std::size_t> plan_tuple_sizes(std::size_t n, std::size_t k_max) {
  if (n == 2) return {2};
  if (n == 1 || k_max == 1) return {1};
  std::vector<std::size_t> ks;
  for (std::size_t k = 2; k <= k_max; ++k) ks.push_back(k);
  return ks;
}

std::size_t crn_output_length(std::size_t n, const KMaxPolicy& policy) {
  return plan_tuple_sizes(n, policy.resolve(n)).size();
}

CrnParams make_crn_params(ParamStore& store, const std::string& prefix, std::size_t d,
                          std::span<const std::size_t> tuple_sizes, bool gated, std::mt19937_64& rng) {
  CrnParams p;
  p.d = d;
  p.gated = gated;
  for (auto k : tuple_sizes) {
    const auto base = prefix + ".k" + std::to_string(k);
    p.main.emplace(k, make_linear(store, base + ".main", 2 * d, d, rng));
    if (gated) p.gate.emplace(k, make_linear(store, base + ".gate", 2 * d, d, rng));
  }
  return p;
}

Tensor g_aggregate(std::span<const Tensor> subset) {
  if (subset.empty()) throw ShapeError("g_aggregate: empty subset");
  return ops::reduce_mean(subset);
}

Tensor h_condition(const Tensor& x, const Tensor& c, const Linear& main, const Linear* gate) {
  const auto d = x.shape().back();
  if (c.rank() == 0 || c.shape().back() != d) {
    throw ShapeError("h_condition: conditioning " + to_string(c.shape()) + " does not match feature extent of " +
                     to_string(x.shape()));
  }
  Tensor cond = c;
  if (c.shape() != x.shape()) {
    if (c.rank() != 1) {
      throw ShapeError("h_condition: conditioning " + to_string(c.shape()) + " must be [d] or match " +
                       to_string(x.shape()));
    }
    Shape lifted(x.rank(), 1);
    lifted.back() = d;
    cond = ops::expand(ops::reshape(c, lifted), x.shape());
  }
  const Tensor parts[] = {x, cond};
  auto joint = ops::concat(parts, x.rank() - 1);
  ops::CostScope scope(ops::CostCategory::kRelationLinear);
  auto out = ops::elu(main(joint));
  if (gate != nullptr) out = ops::hadamard(out, ops::sigmoid((*gate)(joint)));
  return out;
}

ObjectArray crn_forward(const ObjectArray& objects, const Tensor& c, const CrnParams& params,
                        const SubsetPlan& plan, bool gated) {
  validate_objects(objects);
  if (plan.n != objects.size()) {
    throw std::invalid_argument("crn_forward: plan built for " + std::to_string(plan.n) + " objects, got " +
                                std::to_string(objects.size()));
  }
  if (gated && !params.gated) throw std::invalid_argument("crn_forward: gated unit requested without gate weights");
  const auto& item_shape = objects.front().shape();
  if (item_shape.back() != params.d) {
    throw ShapeError("crn_forward: objects " + to_string(item_shape) + " do not have feature extent " +
                     std::to_string(params.d));
  }

  ObjectArray out;
  out.reserve(plan.selected.size());
  for (const auto& [k, subsets] : plan.selected) {
    auto main_it = params.main.find(k);
    if (main_it == params.main.end() || (gated && params.gate.count(k) == 0)) {
      throw std::invalid_argument("crn_forward: no conditioning weights for tuple size " + std::to_string(k));
    }
    std::vector<Tensor> pooled;
    pooled.reserve(subsets.size());
    {
      ops::CostScope scope(ops::CostCategory::kRelationAggregate);
      std::vector<Tensor> members;
      for (const auto& subset : subsets) {
        members.clear();
        for (auto i : subset) members.push_back(objects.at(i));
        pooled.push_back(g_aggregate(members));
      }
    }
    // All subsets of this size share h^k, so they are conditioned as one batch.
    auto batch = ops::stack(pooled);
    Tensor cond = c;
    if (c.shape() == item_shape) {
      Shape lifted{1};
      lifted.insert(lifted.end(), item_shape.begin(), item_shape.end());
      cond = ops::expand(ops::reshape(c, lifted), batch.shape());
    }
    const Linear* gate = gated ? &params.gate.at(k) : nullptr;
    auto relations = h_condition(batch, cond, main_it->second, gate);
    out.push_back(ops::mean_axis(relations, 0));
  }
  return out;
}

}  // namespace hcrn
