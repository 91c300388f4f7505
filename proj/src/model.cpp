#include "trace/model.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "trace/errors.hpp"
#include "trace/ops.hpp"

namespace trace {

void ModelConfig::validate() const {
  if (d_model == 0 || heads == 0 || layers == 0 || max_length == 0 || decay_width == 0) {
    throw ConfigError("model: d_model, heads, layers, max_length and decay_width must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("model: d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (!(period_hours > 0.0)) throw ConfigError("model: period_hours must be positive");
  if (!(init_std > 0.0)) throw ConfigError("model: init_std must be positive");
  if (!(mask_init_low <= mask_init_high)) throw ConfigError("model: mask_init_low > mask_init_high");
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg) {
  ModelConfig c;
  c.d_model = cfg.get_size("model.d_model", c.d_model);
  c.heads = cfg.get_size("model.heads", c.heads);
  c.layers = cfg.get_size("model.layers", c.layers);
  c.max_length = cfg.get_size("model.max_length", c.max_length);
  c.decay_width = cfg.get_size("model.decay_width", c.decay_width);
  c.ffn_width = cfg.get_size("model.ffn_width", c.ffn_width);
  c.period_hours = cfg.get_double("model.period_hours", c.period_hours);
  c.init_std = cfg.get_double("model.init_std", c.init_std);
  c.mask_init_low = cfg.get_double("model.mask_init_low", c.mask_init_low);
  c.mask_init_high = cfg.get_double("model.mask_init_high", c.mask_init_high);
  c.ablation = parse_ablation(cfg.get_string("model.ablation", "none"));
  c.mask_time = parse_mask_time(cfg.get_string("model.mask_time", "target_time"));
  c.time_origin = parse_time_origin(cfg.get_string("model.time_origin", "mask"));
  c.label_mode = parse_label_mode(cfg.get_string("model.label_mode", "code_flag"));
  c.validate();
  return c;
}

std::string ModelConfig::to_config_text() const {
  std::ostringstream o;
  o << "model.d_model = " << d_model << '\n'
    << "model.heads = " << heads << '\n'
    << "model.layers = " << layers << '\n'
    << "model.max_length = " << max_length << '\n'
    << "model.decay_width = " << decay_width << '\n'
    << "model.ffn_width = " << ffn_width << '\n'
    << "model.period_hours = " << format_double(period_hours) << '\n'
    << "model.init_std = " << format_double(init_std) << '\n'
    << "model.mask_init_low = " << format_double(mask_init_low) << '\n'
    << "model.mask_init_high = " << format_double(mask_init_high) << '\n'
    << "model.ablation = " << ablation_name(ablation) << '\n'
    << "model.mask_time = " << to_string(mask_time) << '\n'
    << "model.time_origin = " << to_string(time_origin) << '\n'
    << "model.label_mode = " << to_string(label_mode) << '\n';
  return o.str();
}

Ablation parse_ablation(std::string_view text) {
  if (text == "none" || text.empty()) return {};
  if (text == "d") return {true, false, false};
  if (text == "p") return {false, true, false};
  if (text == "dp") return {true, true, false};
  if (text == "dpm") return {true, true, true};
  throw ConfigError("unknown ablation '" + std::string(text) + "' (expected none|d|p|dp|dpm)");
}

std::string ablation_name(const Ablation& a) {
  if (a.disable_mask && !(a.disable_decay && a.disable_periodic)) {
    // Partial combinations with the mask disabled are still expressible in code.
    std::string s;
    if (a.disable_decay) s += 'd';
    if (a.disable_periodic) s += 'p';
    return s + 'm';
  }
  if (a.disable_mask) return "dpm";
  if (a.disable_decay && a.disable_periodic) return "dp";
  if (a.disable_decay) return "d";
  if (a.disable_periodic) return "p";
  return "none";
}

TraceModel::TraceModel(ModelConfig config, std::size_t vocab_size, std::size_t num_labels,
                       std::uint64_t seed)
    : config_(std::move(config)), vocab_size_(vocab_size), num_labels_(num_labels) {
  config_.validate();
  if (vocab_size == 0 || num_labels == 0) {
    throw ConfigError("model: vocabulary and label set must be non-empty");
  }
  std::mt19937_64 rng(seed);
  encoder_ = EncoderParams::init(vocab_size, config_.positions(), config_.d_model,
                                 config_.decay_width, config_.period_hours, config_.init_std, rng);
  layers_.reserve(config_.layers);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    layers_.push_back(LayerParams::init(config_.d_model, config_.resolved_ffn_width(),
                                        config_.positions(), config_.init_std,
                                        config_.mask_init_low, config_.mask_init_high,
                                        config_.ablation.disable_mask, rng));
  }
  head_ = HeadParams::init(num_labels, config_.d_model, config_.init_std, rng);
}

namespace {

template <typename T>
std::vector<T> trim_grid(const std::vector<T>& grid, std::size_t batch, std::size_t from,
                         std::size_t to) {
  std::vector<T> out(batch * to);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(grid.begin() + static_cast<std::ptrdiff_t>(b * from), to,
                out.begin() + static_cast<std::ptrdiff_t>(b * to));
  }
  return out;
}

}  // namespace

Tensor TraceModel::forward(const EncodedBatch& batch) const { return forward(batch, nullptr); }

Tensor TraceModel::forward(const EncodedBatch& batch, std::vector<Tensor>* hidden_states) const {
  if (batch.batch_size == 0) throw DataError("forward: empty batch");
  if (batch.num_labels != num_labels_) {
    throw DimensionError("forward: batch has " + std::to_string(batch.num_labels) +
                         " labels, model has " + std::to_string(num_labels_));
  }
  const std::size_t length = batch.active_length();
  const auto tokens = trim_grid(batch.tokens, batch.batch_size, batch.length, length);
  const auto times = trim_grid(
      config_.time_origin == TimeOrigin::mask ? relative_to_mask(batch) : batch.times,
      batch.batch_size, batch.length, length);
  const auto real = trim_grid(batch.real, batch.batch_size, batch.length, length);

  Tensor h = encode_events(encoder_, tokens, times, batch.batch_size, length, config_.ablation);
  if (hidden_states) hidden_states->push_back(h);
  AttentionOptions options{config_.heads, !config_.ablation.disable_mask};
  for (const auto& layer : layers_) {
    h = transformer_layer(h, layer, real, options);
    if (hidden_states) hidden_states->push_back(h);
  }
  return predict(h, head_, batch.mask_positions);
}

Tensor TraceModel::denoise() const { return denoise_loss(layers_); }

double TraceModel::denoise_norm() const { return denoise().item(); }

Tensor TraceModel::loss(const EncodedBatch& batch, double lambda, double ce_weight) const {
  Tensor ce = ce_loss(forward(batch), batch.labels);
  if (ce_weight != 1.0) ce = ops::scale(ce, ce_weight);
  if (config_.ablation.disable_mask) return ce;
  return final_loss(ce, denoise(), lambda);
}

std::vector<std::pair<std::string, Tensor*>> TraceModel::parameter_slots() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("encoder.token_embedding", &encoder_.token_embedding);
  out.emplace_back("encoder.position_embedding", &encoder_.position_embedding);
  out.emplace_back("encoder.decay_in_weight", &encoder_.decay_in_weight);
  out.emplace_back("encoder.decay_in_bias", &encoder_.decay_in_bias);
  out.emplace_back("encoder.decay_out_weight", &encoder_.decay_out_weight);
  out.emplace_back("encoder.decay_out_bias", &encoder_.decay_out_bias);
  out.emplace_back("encoder.periodic_weight", &encoder_.periodic_weight);
  out.emplace_back("encoder.periodic_bias", &encoder_.periodic_bias);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& p = layers_[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    out.emplace_back(prefix + "query", &p.query);
    out.emplace_back(prefix + "key", &p.key);
    out.emplace_back(prefix + "value", &p.value);
    out.emplace_back(prefix + "output", &p.output);
    out.emplace_back(prefix + "denoise", &p.denoise);
    out.emplace_back(prefix + "ffn_in", &p.ffn_in);
    out.emplace_back(prefix + "ffn_in_bias", &p.ffn_in_bias);
    out.emplace_back(prefix + "ffn_out", &p.ffn_out);
    out.emplace_back(prefix + "ffn_out_bias", &p.ffn_out_bias);
    out.emplace_back(prefix + "norm1_gain", &p.norm1_gain);
    out.emplace_back(prefix + "norm1_bias", &p.norm1_bias);
    out.emplace_back(prefix + "norm2_gain", &p.norm2_gain);
    out.emplace_back(prefix + "norm2_bias", &p.norm2_bias);
  }
  out.emplace_back("head.weight", &head_.weight);
  out.emplace_back("head.bias", &head_.bias);
  return out;
}

std::vector<NamedParameter> TraceModel::named_parameters() const {
  std::vector<NamedParameter> out;
  for (auto& [name, slot] : const_cast<TraceModel*>(this)->parameter_slots()) {
    out.push_back({name, *slot, slot->requires_grad()});
  }
  return out;
}

TraceModel TraceModel::clone() const {
  TraceModel m = *this;
  for (auto& [name, slot] : m.parameter_slots()) {
    std::vector<double> values(slot->data().begin(), slot->data().end());
    *slot = slot->requires_grad() ? Tensor::parameter(slot->shape(), std::move(values))
                                  : Tensor::from_vector(slot->shape(), std::move(values));
  }
  return m;
}

}  // namespace trace
