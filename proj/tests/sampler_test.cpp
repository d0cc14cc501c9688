#include <gtest/gtest.h>

#include <map>
#include <set>

#include "hcrn/sampler.hpp"

namespace hcrn {
namespace {

// Pascal's triangle, independent of the multiplicative formula.
std::uint64_t pascal(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::uint64_t>> row(n + 1, std::vector<std::uint64_t>(n + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) {
    row[i][0] = 1;
    for (std::size_t j = 1; j <= i; ++j) row[i][j] = row[i - 1][j - 1] + (j <= i - 1 ? row[i - 1][j] : 0);
  }
  return row[n][k];
}

void expect_valid_subsets(const std::vector<IndexSubset>& subsets, std::size_t n, std::size_t k) {
  std::set<IndexSubset> unique(subsets.begin(), subsets.end());
  EXPECT_EQ(unique.size(), subsets.size()) << "subsets not distinct";
  for (const auto& s : subsets) {
    ASSERT_EQ(s.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_LT(s[i], n);
      if (i) EXPECT_LT(s[i - 1], s[i]);
    }
  }
}

TEST(CountSubsets, Examples) {
  EXPECT_EQ(count_subsets(4, 2), 6u);
  EXPECT_EQ(count_subsets(9, 0), 1u);
  EXPECT_EQ(count_subsets(9, 9), 1u);
  EXPECT_EQ(pascal(16, 8), 12870u);
  EXPECT_EQ(count_subsets(16, 8), pascal(16, 8));
  EXPECT_THROW(count_subsets(3, 4), std::invalid_argument);
}

TEST(CountSubsets, MatchesPascalTriangle) {
  for (std::size_t n = 0; n <= 40; ++n) {
    for (std::size_t k = 0; k <= n; ++k) EXPECT_EQ(count_subsets(n, k), pascal(n, k)) << n << "," << k;
  }
  EXPECT_THROW(count_subsets(200, 100), std::overflow_error);
}

TEST(SampleSubsets, ExhaustsWhenTCoversAll) {
  auto subsets = sample_subsets(3, 2, 3, 17);
  std::set<IndexSubset> got(subsets.begin(), subsets.end());
  EXPECT_EQ(got, (std::set<IndexSubset>{{0, 1}, {0, 2}, {1, 2}}));
}

TEST(SampleSubsets, ContractHolds) {
  auto subsets = sample_subsets(8, 3, 2, 5);
  EXPECT_EQ(subsets.size(), 2u);
  expect_valid_subsets(subsets, 8, 3);
}

TEST(SampleSubsets, CapsAtSubsetCount) {
  auto subsets = sample_subsets(5, 4, 100, 1);
  EXPECT_EQ(subsets.size(), 5u);
  expect_valid_subsets(subsets, 5, 4);
}

TEST(SampleSubsets, RejectionRegimeStaysDistinct) {
  // C(30, 15) is far above the enumeration limit.
  auto subsets = sample_subsets(30, 15, 50, 3);
  EXPECT_EQ(subsets.size(), 50u);
  expect_valid_subsets(subsets, 30, 15);
}

TEST(SampleSubsets, RangeErrors) {
  EXPECT_THROW(sample_subsets(5, 1, 1, 0), std::invalid_argument);
  EXPECT_THROW(sample_subsets(5, 5, 1, 0), std::invalid_argument);
  EXPECT_THROW(sample_subsets(5, 2, 0, 0), std::invalid_argument);
}

TEST(SampleSubsets, EmpiricallyUniform) {
  constexpr int kDraws = 100000;
  std::map<IndexSubset, int> freq;
  for (int seed = 0; seed < kDraws; ++seed) ++freq[sample_subsets(5, 2, 1, static_cast<std::uint64_t>(seed))[0]];
  ASSERT_EQ(freq.size(), 10u);
  double chi2 = 0.0;
  for (const auto& [subset, count] : freq) {
    EXPECT_NEAR(count / static_cast<double>(kDraws), 0.1, 0.01);
    const double expected = kDraws / 10.0;
    chi2 += (count - expected) * (count - expected) / expected;
  }
  // 9 degrees of freedom, 0.999 quantile.
  EXPECT_LT(chi2, 27.88);
}

TEST(SampleSubsets, RejectionRegimeIsUniform) {
  // n=14, k=7 has C=3432 > 1024, exercising the rejection path.
  std::map<std::size_t, int> element_freq;
  constexpr int kDraws = 20000;
  for (int seed = 0; seed < kDraws; ++seed) {
    auto drawn = sample_subsets(14, 7, 1, static_cast<std::uint64_t>(seed));
    for (auto i : drawn[0]) ++element_freq[i];
  }
  for (std::size_t i = 0; i < 14; ++i) EXPECT_NEAR(element_freq[i] / static_cast<double>(kDraws), 0.5, 0.02);
}

TEST(BuildPlan, Examples) {
  auto plan = build_plan(6, 5, 2, 1);
  ASSERT_EQ(plan.selected.size(), 4u);
  std::size_t expected_k = 2;
  for (const auto& [k, subsets] : plan.selected) {
    EXPECT_EQ(k, expected_k++);
    EXPECT_EQ(subsets.size(), 2u);
    expect_valid_subsets(subsets, 6, k);
  }

  for (std::size_t t : {1, 2, 7}) {
    auto pair = build_plan(2, 1, t, 4);
    ASSERT_EQ(pair.selected.size(), 1u);
    EXPECT_EQ(pair.selected.at(2), (std::vector<IndexSubset>{{0, 1}}));
  }

  auto big = build_plan(16, 15, 1, 9);
  EXPECT_EQ(big.selected.size(), 14u);
  for (const auto& [k, subsets] : big.selected) EXPECT_EQ(subsets.size(), 1u);
}

TEST(BuildPlan, OutputLengthIsNMinusTwo) {
  for (std::size_t n = 3; n <= 20; ++n) EXPECT_EQ(build_plan(n, n - 1, 2, n).output_length(), n - 2);
}

TEST(BuildPlan, SizeCapInvariant) {
  for (std::size_t n = 3; n <= 9; ++n) {
    for (std::size_t t : {1, 3, 50}) {
      auto plan = build_plan(n, n - 1, t, 7 * n + t);
      for (const auto& [k, subsets] : plan.selected) {
        EXPECT_EQ(subsets.size(), std::min<std::uint64_t>(t, count_subsets(n, k)));
        expect_valid_subsets(subsets, n, k);
      }
    }
  }
}

TEST(BuildPlan, SingletonRegimeWithoutRelations) {
  auto plan = build_plan(8, 1, 3, 2);
  ASSERT_EQ(plan.selected.size(), 1u);
  EXPECT_EQ(plan.selected.at(1).size(), 3u);
  expect_valid_subsets(plan.selected.at(1), 8, 1);
  EXPECT_EQ(build_plan(1, 1, 4, 0).selected.at(1), (std::vector<IndexSubset>{{0}}));
}

TEST(BuildPlan, ReseedingReproducesPlan) {
  auto a = build_plan(12, 11, 3, 42);
  auto b = build_plan(12, 11, 3, 42);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_NE(a, build_plan(12, 11, 3, 43));
}

TEST(BuildPlan, Errors) {
  EXPECT_THROW(build_plan(5, 5, 1, 0), std::invalid_argument);
  EXPECT_THROW(build_plan(5, 0, 1, 0), std::invalid_argument);
  EXPECT_THROW(build_plan(0, 1, 1, 0), std::invalid_argument);
}

TEST(BuildPlan, TextListingHasOneSubsetPerLine) {
  auto text = build_plan(4, 3, 2, 0).to_text();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 4);
  EXPECT_EQ(text.rfind("# n=4 k_max=3 t=2\n", 0), 0u);
}

}  // namespace
}  // namespace hcrn
