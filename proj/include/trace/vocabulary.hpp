#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trace/trajectory.hpp"

namespace trace {

// Label space: lab code x flag ("L03:high") or bare lab code.
enum class LabelMode { code_flag, code_only };

std::string_view to_string(LabelMode mode);
LabelMode parse_label_mode(std::string_view text);

// Lab events carry their observed flag in the input token; other events are bare codes.
std::string input_token(const MedicalEvent& event);
std::string label_token(const MedicalEvent& lab_event, LabelMode mode);

// Bidirectional token and label maps. Token ids 0..2 are reserved for
// padding, the appended mask token, and out-of-vocabulary codes.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kMask = 1;
  static constexpr std::int64_t kUnk = 2;
  static constexpr std::int64_t kFirstToken = 3;

  Vocabulary();

  // Tokens and labels are assigned ids in lexicographic order for byte-stable output.
  static Vocabulary build(std::span<const Trajectory> trajectories, LabelMode mode);
  static Vocabulary from_lists(std::vector<std::string> tokens, std::vector<std::string> labels,
                               LabelMode mode);

  std::optional<std::int64_t> find_token(std::string_view token) const;
  // kUnk for unknown tokens.
  std::int64_t token_id(std::string_view token) const;
  const std::string& token(std::int64_t id) const;
  std::optional<std::size_t> label_id(std::string_view label) const;
  const std::string& label(std::size_t id) const;

  std::size_t token_count() const { return tokens_.size(); }
  std::size_t label_count() const { return labels_.size(); }
  LabelMode label_mode() const { return mode_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::string>& labels() const { return labels_; }

  // `token<TAB>id` per line, ascending id.
  void write_tokens(std::ostream& out) const;
  void write_labels(std::ostream& out) const;
  static Vocabulary read(std::istream& tokens, std::istream& labels, LabelMode mode);

  bool operator==(const Vocabulary& other) const {
    return mode_ == other.mode_ && tokens_ == other.tokens_ && labels_ == other.labels_;
  }

 private:
  void index();

  LabelMode mode_ = LabelMode::code_flag;
  std::vector<std::string> tokens_;
  std::vector<std::string> labels_;
  std::map<std::string, std::int64_t, std::less<>> token_ids_;
  std::map<std::string, std::size_t, std::less<>> label_ids_;
};

}  // namespace trace
