#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace trace {

enum class EventType { diagnosis, procedure, medication, lab };
enum class LabFlag { normal, abnormal, low, high };

std::string_view to_string(EventType type);
std::string_view to_string(LabFlag flag);
std::optional<EventType> parse_event_type(std::string_view text);
std::optional<LabFlag> parse_lab_flag(std::string_view text);

// One coded event. `t` is hours since the start of the visit; `flag` is
// present exactly when `type == EventType::lab`.
struct MedicalEvent {
  std::string code;
  EventType type = EventType::diagnosis;
  std::optional<LabFlag> flag;
  double t = 0.0;

  bool operator==(const MedicalEvent&) const = default;
};

struct Trajectory {
  std::string patient_id;
  std::string visit_id;
  std::vector<MedicalEvent> events;  // non-decreasing in t

  bool operator==(const Trajectory&) const = default;
};

// History up to t_k plus the lab group observed at target_time > t_k.
struct NowcastInstance {
  std::string patient_id;
  std::string visit_id;
  std::vector<MedicalEvent> history;
  double target_time = 0.0;
  std::vector<MedicalEvent> targets;
};

// Throws SchemaError when an event breaks the flag/lab or t >= 0 invariants.
void validate_event(const MedicalEvent& event, std::size_t line = 0);

// Parsing. Each non-blank line is one JSON record; events are stably sorted by t.
Trajectory parse_trajectory_line(std::string_view line, std::size_t line_number);
std::vector<Trajectory> parse_trajectories(std::istream& in);
std::vector<Trajectory> parse_trajectory_file(const std::filesystem::path& path);

std::string serialize_trajectory(const Trajectory& trajectory);
void write_trajectories(std::ostream& out, std::span<const Trajectory> trajectories);
// Writes to a sibling temp file and renames it into place.
void write_trajectory_file(const std::filesystem::path& path,
                           std::span<const Trajectory> trajectories);

// Final maximal group of lab events at the last lab timestamp, with every
// event strictly before it as history. Empty when no lab exists or the
// history would be empty.
std::optional<NowcastInstance> extract_instance(const Trajectory& trajectory);
// One instance per lab timestamp that has a non-empty history; the last
// element equals extract_instance(). Used for training-set augmentation.
std::vector<NowcastInstance> extract_all_instances(const Trajectory& trajectory);

// The most recent `max_length` events, order preserved.
std::vector<MedicalEvent> window(std::span<const MedicalEvent> history, std::size_t max_length);

}  // namespace trace
