#include "trace/vocabulary.hpp"

#include <istream>
#include <ostream>
#include <set>

#include "trace/errors.hpp"

namespace trace {

namespace {
const std::vector<std::string> kReserved = {"<pad>", "<mask>", "<unk>"};

std::vector<std::pair<std::string, std::int64_t>> read_table(std::istream& in, const char* what) {
  std::vector<std::pair<std::string, std::int64_t>> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw ParseError(n, what, std::string(what) + " line " + std::to_string(n) + ": expected token<TAB>id");
    }
    try {
      rows.emplace_back(line.substr(0, tab), std::stoll(line.substr(tab + 1)));
    } catch (const std::logic_error&) {
      throw ParseError(n, what, std::string(what) + " line " + std::to_string(n) + ": bad id");
    }
  }
  return rows;
}

std::vector<std::string> ordered(const std::vector<std::pair<std::string, std::int64_t>>& rows,
                                 std::int64_t first, const char* what) {
  std::vector<std::string> out(rows.size());
  for (const auto& [tok, id] : rows) {
    if (id < first || id - first >= static_cast<std::int64_t>(rows.size()) ||
        !out[static_cast<std::size_t>(id - first)].empty()) {
      throw ParseError(0, what, std::string(what) + ": ids are not a dense permutation");
    }
    out[static_cast<std::size_t>(id - first)] = tok;
  }
  return out;
}
}  // namespace

std::string_view to_string(LabelMode mode) {
  return mode == LabelMode::code_flag ? "code_flag" : "code_only";
}

LabelMode parse_label_mode(std::string_view text) {
  if (text == "code_flag") return LabelMode::code_flag;
  if (text == "code_only") return LabelMode::code_only;
  throw ConfigError("unknown label mode '" + std::string(text) + "'");
}

std::string input_token(const MedicalEvent& event) {
  if (event.type == EventType::lab && event.flag) {
    return event.code + ":" + std::string(to_string(*event.flag));
  }
  return event.code;
}

std::string label_token(const MedicalEvent& lab_event, LabelMode mode) {
  if (mode == LabelMode::code_only || !lab_event.flag) return lab_event.code;
  return lab_event.code + ":" + std::string(to_string(*lab_event.flag));
}

Vocabulary::Vocabulary() : tokens_(kReserved) { index(); }

Vocabulary Vocabulary::build(std::span<const Trajectory> trajectories, LabelMode mode) {
  std::set<std::string> tokens, labels;
  for (const auto& traj : trajectories) {
    for (const auto& e : traj.events) {
      tokens.insert(input_token(e));
      if (e.type == EventType::lab) labels.insert(label_token(e, mode));
    }
  }
  for (const auto& r : kReserved) tokens.erase(r);
  return from_lists({tokens.begin(), tokens.end()}, {labels.begin(), labels.end()}, mode);
}

Vocabulary Vocabulary::from_lists(std::vector<std::string> tokens, std::vector<std::string> labels,
                                  LabelMode mode) {
  Vocabulary v;
  v.mode_ = mode;
  v.tokens_ = kReserved;
  v.tokens_.insert(v.tokens_.end(), tokens.begin(), tokens.end());
  v.labels_ = std::move(labels);
  v.index();
  return v;
}

void Vocabulary::index() {
  token_ids_.clear();
  label_ids_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!token_ids_.emplace(tokens_[i], static_cast<std::int64_t>(i)).second) {
      throw VocabularyError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!label_ids_.emplace(labels_[i], i).second) {
      throw VocabularyError("vocabulary: duplicate label '" + labels_[i] + "'");
    }
  }
}

std::optional<std::int64_t> Vocabulary::find_token(std::string_view token) const {
  auto it = token_ids_.find(token);
  if (it == token_ids_.end() || it->second < kFirstToken) return std::nullopt;
  return it->second;
}

std::int64_t Vocabulary::token_id(std::string_view token) const {
  return find_token(token).value_or(kUnk);
}

const std::string& Vocabulary::token(std::int64_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("vocabulary: token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<std::size_t> Vocabulary::label_id(std::string_view label) const {
  auto it = label_ids_.find(label);
  if (it == label_ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::label(std::size_t id) const {
  if (id >= labels_.size()) {
    throw VocabularyError("vocabulary: label id " + std::to_string(id) + " out of range");
  }
  return labels_[id];
}

void Vocabulary::write_tokens(std::ostream& out) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

void Vocabulary::write_labels(std::ostream& out) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) out << labels_[i] << '\t' << i << '\n';
}

Vocabulary Vocabulary::read(std::istream& tokens, std::istream& labels, LabelMode mode) {
  auto token_rows = read_table(tokens, "tokens");
  auto label_rows = read_table(labels, "labels");
  auto all_tokens = ordered(token_rows, 0, "tokens");
  if (all_tokens.size() < kReserved.size() ||
      !std::equal(kReserved.begin(), kReserved.end(), all_tokens.begin())) {
    throw ParseError(0, "tokens", "tokens: reserved ids 0..2 missing or altered");
  }
  all_tokens.erase(all_tokens.begin(), all_tokens.begin() + static_cast<std::ptrdiff_t>(kReserved.size()));
  return from_lists(std::move(all_tokens), ordered(label_rows, 0, "labels"), mode);
}

}  // namespace trace
