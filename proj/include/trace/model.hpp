#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "trace/batch.hpp"
#include "trace/config.hpp"
#include "trace/encoder.hpp"
#include "trace/head.hpp"
#include "trace/tensor.hpp"
#include "trace/transformer.hpp"
#include "trace/vocabulary.hpp"

namespace trace {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t max_length = 256;  // N; tables are sized N + 1 for the mask token
  std::size_t decay_width = 16;
  std::size_t ffn_width = 0;  // 0 means 4 * d_model
  double period_hours = kDefaultPeriodHours;
  double init_std = 0.02;
  double mask_init_low = 4.0;
  double mask_init_high = 6.0;
  Ablation ablation;
  MaskTime mask_time = MaskTime::target_time;
  TimeOrigin time_origin = TimeOrigin::mask;
  LabelMode label_mode = LabelMode::code_flag;

  std::size_t positions() const { return max_length + 1; }
  std::size_t resolved_ffn_width() const { return ffn_width ? ffn_width : 4 * d_model; }

  void validate() const;
  // Reads `model.*` keys.
  static ModelConfig from_config(const KeyValueConfig& cfg);
  std::string to_config_text() const;
};

// Parses "none", "d", "p", "dp" or "dpm".
Ablation parse_ablation(std::string_view text);
std::string ablation_name(const Ablation& ablation);

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

class TraceModel {
 public:
  TraceModel() = default;
  TraceModel(ModelConfig config, std::size_t vocab_size, std::size_t num_labels,
             std::uint64_t seed);

  // Label probabilities [batch x labels]. The batch is cut to its active
  // length first; padding beyond it cannot affect the result.
  Tensor forward(const EncodedBatch& batch) const;
  Tensor forward(const EncodedBatch& batch, std::vector<Tensor>* hidden_states) const;

  // ce_weight * CE + lambda * sum ||Z||_F. The denoise term is left out when
  // the mask is disabled.
  Tensor loss(const EncodedBatch& batch, double lambda, double ce_weight = 1.0) const;
  Tensor denoise() const;
  double denoise_norm() const;

  // Stable order: encoder, then layers, then head. Frozen tensors (Z under
  // the mask ablation) are listed with trainable = false.
  std::vector<NamedParameter> named_parameters() const;
  // Same order; lets loaders replace tensors in place.
  std::vector<std::pair<std::string, Tensor*>> parameter_slots();

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::size_t num_labels() const { return num_labels_; }
  const EncoderParams& encoder() const { return encoder_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const HeadParams& head() const { return head_; }
  EncoderParams& encoder() { return encoder_; }
  std::vector<LayerParams>& layers() { return layers_; }
  HeadParams& head() { return head_; }

  // Independent deep copy of every parameter tensor.
  TraceModel clone() const;

 private:
  ModelConfig config_;
  std::size_t vocab_size_ = 0;
  std::size_t num_labels_ = 0;
  EncoderParams encoder_;
  std::vector<LayerParams> layers_;
  HeadParams head_;
};

}  // namespace trace
