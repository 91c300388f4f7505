#pragma once

#include <random>
#include <string>
#include <vector>

#include "trace/batch.hpp"
#include "trace/model.hpp"
#include "trace/vocabulary.hpp"

namespace trace::testing {

// Random right-padded batch: each row holds 1..length-1 history tokens from
// [kFirstToken, vocab), the mask token, then padding. Times are increasing.
inline EncodedBatch random_batch(std::size_t batch, std::size_t length, std::size_t vocab,
                                 std::size_t labels, std::mt19937_64& rng) {
  EncodedBatch b;
  b.batch_size = batch;
  b.length = length;
  b.num_labels = labels;
  b.tokens.assign(batch * length, Vocabulary::kPad);
  b.times.assign(batch * length, 0.0);
  b.real.assign(batch * length, 0);
  b.labels.assign(batch * labels, 0.0);
  std::uniform_int_distribution<std::size_t> count(1, length - 1);
  std::uniform_int_distribution<std::int64_t> token(Vocabulary::kFirstToken,
                                                    static_cast<std::int64_t>(vocab) - 1);
  std::uniform_real_distribution<double> gap(0.0, 9.0);
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t n = count(rng);
    double t = gap(rng);
    for (std::size_t i = 0; i < n; ++i) {
      b.tokens[r * length + i] = token(rng);
      b.times[r * length + i] = t;
      b.real[r * length + i] = 1;
      t += gap(rng);
    }
    b.tokens[r * length + n] = Vocabulary::kMask;
    b.times[r * length + n] = t;
    b.real[r * length + n] = 1;
    b.mask_positions.push_back(n);
    bool any = false;
    for (std::size_t c = 0; c < labels; ++c) {
      const bool on = rng() % 3 == 0;
      b.labels[r * labels + c] = on ? 1.0 : 0.0;
      any = any || on;
    }
    if (!any) b.labels[r * labels] = 1.0;
  }
  return b;
}

// Redraws every trainable table at a scale where all terms matter. Gains
// stay near 1 and Z keeps its sign, so the model stays well conditioned.
inline void randomize(TraceModel& model, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::uniform_real_distribution<double> gate(0.5, 1.5);
  for (auto& [name, tensor] : model.parameter_slots()) {
    if (!tensor->requires_grad()) continue;
    const bool gain = name.find("gain") != std::string::npos;
    const bool mask = name.find("denoise") != std::string::npos;
    for (auto& v : tensor->mutable_data()) {
      v = mask ? gate(rng) : (gain ? 1.0 : 0.0) + normal(rng);
    }
  }
}

}  // namespace trace::testing
