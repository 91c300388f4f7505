#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "trace/errors.hpp"

namespace trace {

struct SplitRatios {
  double train = 0.75;
  double val = 0.10;
  double test = 0.15;

  void validate() const {
    if (train < 0.0 || val < 0.0 || test < 0.0 || std::abs(train + val + test - 1.0) > 1e-9) {
      throw ConfigError("split ratios must be non-negative and sum to 1");
    }
  }
};

template <typename T>
struct SplitSets {
  std::vector<T> train;
  std::vector<T> val;
  std::vector<T> test;
};

// Shuffles the sorted distinct patient ids with `seed` and slices them
// contiguously: round(train * n) patients, then round(val * n), then the rest.
// Every item follows its patient, so no patient appears in two sets.
template <typename T>
SplitSets<T> split_by_patient(const std::vector<T>& items, const SplitRatios& ratios,
                              std::uint64_t seed) {
  ratios.validate();
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < items.size(); ++i) by_patient[items[i].patient_id].push_back(i);
  if (by_patient.size() < 3) {
    throw DataError("split: need at least 3 patients, got " + std::to_string(by_patient.size()));
  }
  std::vector<const std::vector<std::size_t>*> groups;
  for (const auto& [id, members] : by_patient) groups.push_back(&members);
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);

  const auto n = static_cast<double>(groups.size());
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
  const auto n_val = std::min(groups.size() - n_train,
                              static_cast<std::size_t>(std::llround(ratios.val * n)));
  SplitSets<T> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& dest = g < n_train ? out.train : (g < n_train + n_val ? out.val : out.test);
    for (std::size_t i : *groups[g]) dest.push_back(items[i]);
  }
  return out;
}

}  // namespace trace
