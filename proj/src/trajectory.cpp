#include "trace/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "trace/errors.hpp"
#include "trace/io_util.hpp"

namespace trace {

namespace {
constexpr std::string_view kTypeNames[] = {"diagnosis", "procedure", "medication", "lab"};
constexpr std::string_view kFlagNames[] = {"normal", "abnormal", "low", "high"};

std::string where(std::size_t line) {
  return line ? "line " + std::to_string(line) + ": " : std::string();
}

const nlohmann::json& require(const nlohmann::json& obj, const char* key, std::size_t line,
                              const std::string& context) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError(line, context + key, where(line) + "missing field '" + context + key + "'");
  }
  return *it;
}

std::string require_string(const nlohmann::json& obj, const char* key, std::size_t line,
                           const std::string& context) {
  const auto& v = require(obj, key, line, context);
  if (!v.is_string()) {
    throw ParseError(line, context + key, where(line) + "field '" + context + key +
                                              "' must be a string");
  }
  return v.get<std::string>();
}
}  // namespace

std::string_view to_string(EventType type) { return kTypeNames[static_cast<int>(type)]; }
std::string_view to_string(LabFlag flag) { return kFlagNames[static_cast<int>(flag)]; }

std::optional<EventType> parse_event_type(std::string_view text) {
  for (int i = 0; i < 4; ++i) {
    if (kTypeNames[i] == text) return static_cast<EventType>(i);
  }
  return std::nullopt;
}

std::optional<LabFlag> parse_lab_flag(std::string_view text) {
  for (int i = 0; i < 4; ++i) {
    if (kFlagNames[i] == text) return static_cast<LabFlag>(i);
  }
  return std::nullopt;
}

void validate_event(const MedicalEvent& event, std::size_t line) {
  const bool is_lab = event.type == EventType::lab;
  if (is_lab && !event.flag) {
    throw SchemaError(line, "flag", where(line) + "lab event '" + event.code + "' has no flag");
  }
  if (!is_lab && event.flag) {
    throw SchemaError(line, "flag",
                      where(line) + "flag on non-lab event '" + event.code + "' of type " +
                          std::string(to_string(event.type)));
  }
  if (!std::isfinite(event.t) || event.t < 0.0) {
    throw SchemaError(line, "t", where(line) + "event '" + event.code +
                                     "' has invalid timestamp " + std::to_string(event.t));
  }
}

Trajectory parse_trajectory_line(std::string_view line, std::size_t line_number) {
  nlohmann::json record;
  try {
    record = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(line_number, "", where(line_number) + "invalid JSON: " + e.what());
  }
  if (!record.is_object()) {
    throw ParseError(line_number, "", where(line_number) + "record must be an object");
  }
  Trajectory traj;
  traj.patient_id = require_string(record, "patient_id", line_number, "");
  traj.visit_id = require_string(record, "visit_id", line_number, "");
  const auto& events = require(record, "events", line_number, "");
  if (!events.is_array()) {
    throw ParseError(line_number, "events", where(line_number) + "field 'events' must be an array");
  }
  traj.events.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const std::string ctx = "events[" + std::to_string(i) + "].";
    if (!e.is_object()) {
      throw ParseError(line_number, ctx, where(line_number) + ctx + " must be an object");
    }
    MedicalEvent ev;
    ev.code = require_string(e, "code", line_number, ctx);
    const std::string type = require_string(e, "type", line_number, ctx);
    auto parsed_type = parse_event_type(type);
    if (!parsed_type) {
      throw ParseError(line_number, ctx + "type",
                       where(line_number) + "unknown event type '" + type + "'");
    }
    ev.type = *parsed_type;
    if (auto it = e.find("flag"); it != e.end()) {
      if (!it->is_string()) {
        throw ParseError(line_number, ctx + "flag", where(line_number) + ctx + "flag must be a string");
      }
      auto flag = parse_lab_flag(it->get<std::string>());
      if (!flag) {
        throw ParseError(line_number, ctx + "flag",
                         where(line_number) + "unknown flag '" + it->get<std::string>() + "'");
      }
      ev.flag = *flag;
    }
    const auto& t = require(e, "t", line_number, ctx);
    if (!t.is_number()) {
      throw ParseError(line_number, ctx + "t", where(line_number) + ctx + "t must be a number");
    }
    ev.t = t.get<double>();
    validate_event(ev, line_number);
    traj.events.push_back(std::move(ev));
  }
  std::stable_sort(traj.events.begin(), traj.events.end(),
                   [](const MedicalEvent& a, const MedicalEvent& b) { return a.t < b.t; });
  return traj;
}

std::vector<Trajectory> parse_trajectories(std::istream& in) {
  std::vector<Trajectory> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(parse_trajectory_line(line, line_number));
  }
  return out;
}

std::vector<Trajectory> parse_trajectory_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file " + path.string());
  return parse_trajectories(in);
}

std::string serialize_trajectory(const Trajectory& trajectory) {
  nlohmann::ordered_json record;
  record["patient_id"] = trajectory.patient_id;
  record["visit_id"] = trajectory.visit_id;
  auto events = nlohmann::ordered_json::array();
  for (const auto& e : trajectory.events) {
    nlohmann::ordered_json ev;
    ev["code"] = e.code;
    ev["type"] = std::string(to_string(e.type));
    if (e.flag) ev["flag"] = std::string(to_string(*e.flag));
    ev["t"] = e.t;
    events.push_back(std::move(ev));
  }
  record["events"] = std::move(events);
  return record.dump();
}

void write_trajectories(std::ostream& out, std::span<const Trajectory> trajectories) {
  for (const auto& t : trajectories) out << serialize_trajectory(t) << '\n';
}

void write_trajectory_file(const std::filesystem::path& path,
                           std::span<const Trajectory> trajectories) {
  std::ostringstream buffer;
  write_trajectories(buffer, trajectories);
  write_file_atomic(path, buffer.str());
}

namespace {

// Lab events at exactly `target_time` become targets; earlier events form the history.
std::optional<NowcastInstance> instance_at(const Trajectory& traj, double target_time) {
  NowcastInstance inst;
  inst.patient_id = traj.patient_id;
  inst.visit_id = traj.visit_id;
  inst.target_time = target_time;
  for (const auto& e : traj.events) {
    if (e.t < target_time) {
      inst.history.push_back(e);
    } else if (e.t == target_time && e.type == EventType::lab) {
      inst.targets.push_back(e);
    }
  }
  if (inst.history.empty() || inst.targets.empty()) return std::nullopt;
  return inst;
}

}  // namespace

std::optional<NowcastInstance> extract_instance(const Trajectory& trajectory) {
  std::optional<double> last_lab;
  for (const auto& e : trajectory.events) {
    if (e.type == EventType::lab && (!last_lab || e.t >= *last_lab)) last_lab = e.t;
  }
  if (!last_lab) return std::nullopt;
  return instance_at(trajectory, *last_lab);
}

std::vector<NowcastInstance> extract_all_instances(const Trajectory& trajectory) {
  std::vector<double> lab_times;
  for (const auto& e : trajectory.events) {
    if (e.type == EventType::lab) lab_times.push_back(e.t);
  }
  std::sort(lab_times.begin(), lab_times.end());
  lab_times.erase(std::unique(lab_times.begin(), lab_times.end()), lab_times.end());
  std::vector<NowcastInstance> out;
  for (double t : lab_times) {
    if (auto inst = instance_at(trajectory, t)) out.push_back(std::move(*inst));
  }
  return out;
}

std::vector<MedicalEvent> window(std::span<const MedicalEvent> history, std::size_t max_length) {
  if (max_length == 0) throw ContractError("window: maximum length must be at least 1");
  const std::size_t start = history.size() > max_length ? history.size() - max_length : 0;
  return {history.begin() + static_cast<std::ptrdiff_t>(start), history.end()};
}

}  // namespace trace
