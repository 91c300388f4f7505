#include "trace/batch.hpp"

#include <algorithm>
#include <string>

#include "trace/errors.hpp"

namespace trace {

std::string_view to_string(MaskTime mode) {
  return mode == MaskTime::target_time ? "target_time" : "last_event";
}

MaskTime parse_mask_time(std::string_view text) {
  if (text == "target_time") return MaskTime::target_time;
  if (text == "last_event") return MaskTime::last_event;
  throw ConfigError("unknown mask time mode '" + std::string(text) + "'");
}

std::string_view to_string(TimeOrigin origin) {
  return origin == TimeOrigin::visit_start ? "visit_start" : "mask";
}

TimeOrigin parse_time_origin(std::string_view text) {
  if (text == "visit_start") return TimeOrigin::visit_start;
  if (text == "mask") return TimeOrigin::mask;
  throw ConfigError("unknown time origin '" + std::string(text) + "' (expected visit_start|mask)");
}

std::vector<double> relative_to_mask(const EncodedBatch& batch) {
  std::vector<double> out(batch.times.size(), 0.0);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    const std::size_t row = b * batch.length;
    const double reference = batch.times[row + batch.mask_positions[b]];
    for (std::size_t i = 0; i < batch.length; ++i) {
      if (batch.real[row + i]) out[row + i] = reference - batch.times[row + i];
    }
  }
  return out;
}

std::size_t EncodedBatch::real_count(std::size_t row) const {
  const auto begin = real.begin() + static_cast<std::ptrdiff_t>(row * length);
  return static_cast<std::size_t>(std::count(begin, begin + static_cast<std::ptrdiff_t>(length), 1));
}

std::size_t EncodedBatch::active_length() const {
  std::size_t longest = 0;
  for (std::size_t pos : mask_positions) longest = std::max(longest, pos + 1);
  return longest;
}

std::vector<double> label_vector(std::span<const MedicalEvent> targets, const Vocabulary& vocab,
                                 std::size_t* dropped) {
  std::vector<double> row(vocab.label_count(), 0.0);
  for (const auto& e : targets) {
    if (auto id = vocab.label_id(label_token(e, vocab.label_mode()))) {
      row[*id] = 1.0;
    } else if (dropped) {
      ++*dropped;
    }
  }
  return row;
}

EncodedBatch encode_batch(std::span<const NowcastInstance> instances, const Vocabulary& vocab,
                          std::size_t max_length, MaskTime mask_time) {
  if (max_length == 0) throw ContractError("encode_batch: maximum length must be at least 1");
  EncodedBatch batch;
  batch.batch_size = instances.size();
  batch.length = max_length + 1;
  batch.num_labels = vocab.label_count();
  batch.tokens.assign(batch.batch_size * batch.length, Vocabulary::kPad);
  batch.times.assign(batch.batch_size * batch.length, 0.0);
  batch.real.assign(batch.batch_size * batch.length, 0);
  batch.mask_positions.resize(batch.batch_size);
  batch.labels.reserve(batch.batch_size * batch.num_labels);

  for (std::size_t b = 0; b < instances.size(); ++b) {
    const auto& inst = instances[b];
    if (inst.history.empty()) throw ContractError("encode_batch: instance with empty history");
    const auto events = window(inst.history, max_length);
    const std::size_t base = b * batch.length;
    for (std::size_t i = 0; i < events.size(); ++i) {
      const auto id = vocab.token_id(input_token(events[i]));
      if (id == Vocabulary::kUnk) ++batch.unknown_tokens;
      batch.tokens[base + i] = id;
      batch.times[base + i] = events[i].t;
      batch.real[base + i] = 1;
    }
    const std::size_t mpos = events.size();
    batch.tokens[base + mpos] = Vocabulary::kMask;
    batch.times[base + mpos] =
        mask_time == MaskTime::target_time ? inst.target_time : events.back().t;
    batch.real[base + mpos] = 1;
    batch.mask_positions[b] = mpos;

    const auto row = label_vector(inst.targets, vocab, &batch.dropped_targets);
    batch.labels.insert(batch.labels.end(), row.begin(), row.end());
  }
  return batch;
}

}  // namespace trace
