#pragma once

// Conditional relation unit: maps an array of n objects and a conditioning
// feature to an array of k-tuple relation summaries, one per tuple size in the
// subset plan.

#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hcrn/params.hpp"
#include "hcrn/sampler.hpp"
#include "hcrn/tensor.hpp"

namespace hcrn {

// Ordered objects sharing one shape [..., d]. Leading extents are positional.
using ObjectArray = std::vector<Tensor>;

// Throws ShapeError unless `objects` is non-empty and homogeneous.
void validate_objects(const ObjectArray& objects);

// How the largest tuple size follows from the input length n.
struct KMaxPolicy {
  enum class Kind { kAllButOne, kHalf, kFixed };
  Kind kind = Kind::kAllButOne;
  std::size_t value = 0;  // used by kFixed

  std::size_t resolve(std::size_t n) const;
  std::string to_string() const;
  static KMaxPolicy parse(const std::string& text);
};

// Tuple sizes build_plan(n, k_max, ...) produces, in ascending order.
std::vector<std::size_t> plan_tuple_sizes(std::size_t n, std::size_t k_max);

// Output length of a unit with the given input length and policy.
std::size_t crn_output_length(std::size_t n, const KMaxPolicy& policy);

// Conditioning maps h^k, one per tuple size, shared across subsets of that size.
struct CrnParams {
  std::size_t d = 0;
  bool gated = false;
  std::map<std::size_t, Linear> main;  // W_h1: [2d -> d]
  std::map<std::size_t, Linear> gate;  // W_h2: [2d -> d], present when gated
};

CrnParams make_crn_params(ParamStore& store, const std::string& prefix, std::size_t d,
                          std::span<const std::size_t> tuple_sizes, bool gated, std::mt19937_64& rng);

// Elementwise mean of the subset members.
Tensor g_aggregate(std::span<const Tensor> subset);

// ELU(W1 [x, c] + b1), multiplied by sigmoid(W2 [x, c] + b2) when `gate` is set.
// `c` either matches x's shape or is a [d] vector broadcast over x's positions.
Tensor h_condition(const Tensor& x, const Tensor& c, const Linear& main, const Linear* gate);

// Runs the unit. For each tuple size in ascending order, every selected subset
// is averaged, conditioned, and the results averaged into one output object.
ObjectArray crn_forward(const ObjectArray& objects, const Tensor& c, const CrnParams& params,
                        const SubsetPlan& plan, bool gated);

}  // namespace hcrn
