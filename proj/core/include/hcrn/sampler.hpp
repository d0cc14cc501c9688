#pragma once

// Selection of object subsets for the relation unit.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcrn {

// Sorted, distinct object indices.
using IndexSubset = std::vector<std::size_t>;

struct SubsetPlan {
  std::size_t n = 0;
  std::size_t k_max = 0;
  std::size_t t = 0;
  // Tuple size -> selected subsets. Iteration is in ascending tuple size.
  std::map<std::size_t, std::vector<IndexSubset>> selected;

  // Number of relation summaries a unit built on this plan produces.
  std::size_t output_length() const { return selected.size(); }

  // One subset per line: "<k>: i j ...". Preceded by a header line.
  std::string to_text() const;

  bool operator==(const SubsetPlan&) const = default;
};

// C(n, k). Throws std::invalid_argument when k > n and std::overflow_error
// when the result does not fit in 64 bits.
std::uint64_t count_subsets(std::size_t n, std::size_t k);

// min(t, C(n, k)) distinct size-k subsets of [0, n), drawn uniformly without
// replacement. Requires 2 <= k < n and t >= 1.
std::vector<IndexSubset> sample_subsets(std::size_t n, std::size_t k, std::size_t t, std::uint64_t seed);

// Subset plan for an array of n objects.
//
//   n >= 3, k_max >= 2 : tuple sizes 2..k_max, min(t, C(n, k)) subsets each
//   n == 2             : the single pair {0, 1} under tuple size 2
//   k_max == 1         : t single objects under tuple size 1 (no relations)
//
// k_max must not exceed max(n - 1, 1).
SubsetPlan build_plan(std::size_t n, std::size_t k_max, std::size_t t, std::uint64_t seed);

// Deterministic 64-bit mixing for deriving independent seed streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace hcrn
