#include "trace/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "trace/config.hpp"
#include "trace/errors.hpp"
#include "trace/io_util.hpp"

namespace trace {

namespace {

constexpr std::string_view kMagic = "trace-checkpoint";

void put_f64(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

std::string shape_field(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s.empty() ? "scalar" : s;
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  if (text == "scalar") return shape;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('x', start), text.size());
    shape.push_back(std::stoull(text.substr(start, end - start)));
    start = end + 1;
  }
  return shape;
}

// Reads the next line and checks it against `expected`.
void expect_line(std::istream& in, const std::string& expected) {
  std::string line;
  if (!std::getline(in, line) || line != expected) {
    throw ParseError(0, expected, "checkpoint: expected '" + expected + "', got '" + line + "'");
  }
}

// Lines up to (not including) a line equal to `terminator`.
std::string read_section(std::istream& in, const std::string& terminator) {
  std::string body, line;
  while (std::getline(in, line)) {
    if (line == terminator) return body;
    body += line;
    body += '\n';
  }
  throw ParseError(0, terminator, "checkpoint: missing '" + terminator + "'");
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::ostringstream m;
  m << kMagic << ' ' << Checkpoint::kFormatVersion << '\n';
  m << "[config]\n" << ck.model.config().to_config_text() << ck.train_config.to_config_text();
  m << "[meta]\n"
    << "vocab_size = " << ck.model.vocab_size() << '\n'
    << "num_labels = " << ck.model.num_labels() << '\n'
    << "best_val_pr_auc = " << (ck.best_val_pr_auc ? format_double(*ck.best_val_pr_auc) : "none")
    << '\n'
    << "median_panel_gap = " << format_double(ck.median_panel_gap) << '\n'
    << "rng_state = " << ck.rng_state << '\n';
  m << "[tokens]\n";
  ck.vocab.write_tokens(m);
  m << "[labels]\n";
  ck.vocab.write_labels(m);

  const auto params = ck.model.named_parameters();
  std::size_t offset = 0;
  m << "[tensors]\n";
  for (const auto& p : params) {
    m << p.name << '\t' << shape_field(p.tensor.shape()) << '\t' << offset << '\t'
      << (p.trainable ? "trainable" : "frozen") << '\n';
    offset += p.tensor.numel();
  }
  m << "[payload " << offset * 8 << "]\n";

  std::string out = m.str();
  out.reserve(out.size() + offset * 8);
  for (const auto& p : params) {
    for (double v : p.tensor.data()) put_f64(out, v);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string header;
  std::getline(in, header);
  const std::string prefix = std::string(kMagic) + ' ';
  if (header.rfind(prefix, 0) != 0) throw VersionError("not a checkpoint file");
  const std::string version = header.substr(prefix.size());
  if (version != std::to_string(Checkpoint::kFormatVersion)) {
    throw VersionError("checkpoint format version " + version + " (this build reads version " +
                       std::to_string(Checkpoint::kFormatVersion) + ")");
  }

  expect_line(in, "[config]");
  std::istringstream config_text(read_section(in, "[meta]"));
  auto config = KeyValueConfig::parse(config_text, "checkpoint");
  Checkpoint ck;
  ModelConfig model_config = ModelConfig::from_config(config);
  ck.train_config = TrainConfig::from_config(config);
  config.require_all_consumed();

  std::istringstream meta_text(read_section(in, "[tokens]"));
  auto meta = KeyValueConfig::parse(meta_text, "checkpoint meta");
  const std::size_t vocab_size = meta.get_size("vocab_size", 0);
  const std::size_t num_labels = meta.get_size("num_labels", 0);
  const std::string best = meta.get_string("best_val_pr_auc", "none");
  if (best != "none") ck.best_val_pr_auc = meta.get_double("best_val_pr_auc", 0.0);
  ck.median_panel_gap = meta.get_double("median_panel_gap", 0.0);
  ck.rng_state = meta.get_string("rng_state", "");

  std::istringstream tokens(read_section(in, "[labels]"));
  std::istringstream labels(read_section(in, "[tensors]"));
  ck.vocab = Vocabulary::read(tokens, labels, model_config.label_mode);
  if (ck.vocab.token_count() != vocab_size || ck.vocab.label_count() != num_labels) {
    throw ParseError(0, "meta", "checkpoint: vocabulary sizes disagree with the manifest");
  }

  std::string index, line;
  while (std::getline(in, line) && line.rfind("[payload ", 0) != 0) index += line + '\n';
  if (line.rfind("[payload ", 0) != 0) throw ParseError(0, "payload", "checkpoint: no payload");
  const std::size_t payload_bytes = std::stoull(line.substr(9, line.size() - 10));
  const auto payload_start = static_cast<std::size_t>(in.tellg());
  if (bytes.size() - payload_start != payload_bytes) {
    throw ParseError(0, "payload", "checkpoint: payload is " +
                                       std::to_string(bytes.size() - payload_start) +
                                       " bytes, manifest says " + std::to_string(payload_bytes));
  }
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_start;

  // Build a skeleton with the right shapes, then overwrite every tensor.
  ck.model = TraceModel(model_config, vocab_size, num_labels, 0);
  auto slots = ck.model.parameter_slots();
  std::istringstream index_in(index);
  std::size_t seen = 0;
  while (std::getline(index_in, line)) {
    std::istringstream fields(line);
    std::string name, shape_text, offset_text, status;
    std::getline(fields, name, '\t');
    std::getline(fields, shape_text, '\t');
    std::getline(fields, offset_text, '\t');
    std::getline(fields, status, '\t');
    if (seen >= slots.size() || slots[seen].first != name) {
      throw ParseError(seen + 1, "tensors", "checkpoint: unexpected tensor '" + name + "'");
    }
    Tensor& slot = *slots[seen].second;
    const Shape shape = parse_shape(shape_text);
    if (shape != slot.shape()) {
      throw DimensionError("checkpoint: tensor " + name + " has shape " + shape_string(shape) +
                           ", model expects " + shape_string(slot.shape()));
    }
    const std::size_t offset = std::stoull(offset_text);
    const std::size_t count = shape_numel(shape);
    if ((offset + count) * 8 > payload_bytes) {
      throw ParseError(seen + 1, "tensors", "checkpoint: tensor " + name + " overruns payload");
    }
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) values[i] = get_f64(payload + 8 * (offset + i));
    slot = status == "frozen" ? Tensor::from_vector(shape, std::move(values))
                              : Tensor::parameter(shape, std::move(values));
    ++seen;
  }
  if (seen != slots.size()) throw ParseError(0, "tensors", "checkpoint: missing tensors");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace trace
