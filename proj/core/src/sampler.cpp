#include "hcrn/sampler.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace hcrn {

namespace {

constexpr std::uint64_t kEnumerationLimit = 1024;

std::size_t uniform_below(std::mt19937_64& rng, std::size_t bound) {
  return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng);
}

std::vector<IndexSubset> enumerate_all(std::size_t n, std::size_t k) {
  std::vector<IndexSubset> all;
  IndexSubset cur(k);
  std::iota(cur.begin(), cur.end(), std::size_t{0});
  while (true) {
    all.push_back(cur);
    std::size_t i = k;
    while (i > 0 && cur[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) break;
    ++cur[i - 1];
    for (std::size_t j = i; j < k; ++j) cur[j] = cur[j - 1] + 1;
  }
  return all;
}

// Floyd's algorithm: a uniformly random size-k subset of [0, n).
IndexSubset random_subset(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::set<std::size_t> chosen;
  for (std::size_t j = n - k; j < n; ++j) {
    auto v = uniform_below(rng, j + 1);
    if (!chosen.insert(v).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

std::vector<IndexSubset> draw(std::size_t n, std::size_t k, std::size_t t, std::uint64_t seed) {
  const auto total = count_subsets(n, k);
  const auto want = static_cast<std::size_t>(std::min<std::uint64_t>(t, total));
  std::mt19937_64 rng(seed);
  if (total <= kEnumerationLimit) {
    auto all = enumerate_all(n, k);
    for (std::size_t i = 0; i < want; ++i) {
      auto j = i + uniform_below(rng, all.size() - i);
      std::swap(all[i], all[j]);
    }
    all.resize(want);
    return all;
  }
  std::set<IndexSubset> seen;
  std::vector<IndexSubset> out;
  out.reserve(want);
  while (out.size() < want) {
    auto s = random_subset(rng, n, k);
    if (seen.insert(s).second) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over a combination of both inputs
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t count_subsets(std::size_t n, std::size_t k) {
  if (k > n) {
    throw std::invalid_argument("count_subsets: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  }
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::size_t i = 0; i < k; ++i) {
    acc = acc * (n - i) / (i + 1);
    if (acc > std::numeric_limits<std::uint64_t>::max()) {
      throw std::overflow_error("count_subsets: C(" + std::to_string(n) + "," + std::to_string(k) +
                                ") exceeds 64 bits");
    }
  }
  return static_cast<std::uint64_t>(acc);
}

std::vector<IndexSubset> sample_subsets(std::size_t n, std::size_t k, std::size_t t, std::uint64_t seed) {
  if (k < 2 || k >= n) {
    throw std::invalid_argument("sample_subsets: k=" + std::to_string(k) + " out of range [2, " + std::to_string(n) +
                                ")");
  }
  if (t == 0) throw std::invalid_argument("sample_subsets: t must be at least 1");
  return draw(n, k, t, seed);
}

SubsetPlan build_plan(std::size_t n, std::size_t k_max, std::size_t t, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("build_plan: empty object array");
  if (t == 0) throw std::invalid_argument("build_plan: t must be at least 1");
  if (k_max == 0 || k_max > std::max<std::size_t>(n - 1, 1)) {
    throw std::invalid_argument("build_plan: k_max=" + std::to_string(k_max) + " invalid for n=" + std::to_string(n));
  }
  SubsetPlan plan{n, k_max, t, {}};
  if (n == 2) {
    plan.selected[2] = {IndexSubset{0, 1}};
  } else if (k_max == 1) {
    plan.selected[1] = draw(n, 1, t, mix_seed(seed, 1));
  } else {
    for (std::size_t k = 2; k <= k_max; ++k) plan.selected[k] = draw(n, k, t, mix_seed(seed, k));
  }
  return plan;
}

std::string SubsetPlan::to_text() const {
  std::ostringstream os;
  os << "# n=" << n << " k_max=" << k_max << " t=" << t << '\n';
  for (const auto& [k, subsets] : selected) {
    for (const auto& s : subsets) {
      os << k << ':';
      for (auto i : s) os << ' ' << i;
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace hcrn
