#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "trace/trajectory.hpp"
#include "trace/vocabulary.hpp"

namespace trace {

// Timestamp given to the appended mask token.
enum class MaskTime {
  target_time,  // t_{k+1}: the scheduled draw time of the group being predicted
  last_event,   // t_k: strict nowcast from the last observed event
};

std::string_view to_string(MaskTime mode);
MaskTime parse_mask_time(std::string_view text);

// Clock the encoder reads timestamps on.
enum class TimeOrigin {
  visit_start,  // hours since the start of the visit, as stored
  mask,         // hours before the mask token's time (the mask token itself sits at 0)
};

std::string_view to_string(TimeOrigin origin);
TimeOrigin parse_time_origin(std::string_view text);

// Row-major [batch x length] grids with length = N + 1. Row b holds the
// windowed history, then the mask token, then padding (id 0, time 0).
struct EncodedBatch {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::size_t num_labels = 0;
  std::vector<std::int64_t> tokens;
  std::vector<double> times;
  std::vector<std::uint8_t> real;  // 1 on history tokens and the mask token
  std::vector<std::size_t> mask_positions;
  std::vector<double> labels;  // [batch x num_labels] multi-hot
  std::size_t unknown_tokens = 0;
  std::size_t dropped_targets = 0;  // target labels absent from the vocabulary

  std::size_t real_count(std::size_t row) const;
  // Smallest length that still covers every real position.
  std::size_t active_length() const;
};

// Re-expresses the real positions of `times` as t_mask - t; padding is left at 0.
std::vector<double> relative_to_mask(const EncodedBatch& batch);

EncodedBatch encode_batch(std::span<const NowcastInstance> instances, const Vocabulary& vocab,
                          std::size_t max_length, MaskTime mask_time = MaskTime::target_time);

// Multi-hot label row for one instance's target events.
std::vector<double> label_vector(std::span<const MedicalEvent> targets, const Vocabulary& vocab,
                                 std::size_t* dropped = nullptr);

}  // namespace trace
