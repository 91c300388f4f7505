#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "trace/config.hpp"
#include "trace/trajectory.hpp"
#include "trace/vocabulary.hpp"

namespace trace {

enum class FlagStyle { binary, tri };

// Synthetic intra-visit trajectories with planted temporal structure.
//
// Lab codes are split into three classes: core labs (drawn at every routine
// panel), extended labs (ordered more often as the stay goes on), and stat
// labs (only drawn at off-cycle draws). Rules:
//  - routine panels fall at t = phase + k * period for a per-patient phase;
//    zero to two stat draws per day fall at random off-cycle hours;
//  - a lab abnormal in one group recurs abnormal in the next group with
//    probability retest_probability;
//  - medication M_j, given after lab j was abnormal, scales lab j's abnormal
//    probability in the next group by (1 - medication_effect);
//  - each diagnosis raises the ordering rate of one extended lab.
// The visit is cut after a uniformly chosen lab group (never the first), so
// the final target group is a routine panel or a stat draw.
struct SynthConfig {
  std::size_t patients = 200;
  std::size_t lab_codes = 20;
  std::size_t core_labs = 8;
  std::size_t extended_labs = 6;
  std::size_t medication_codes = 12;  // the first min(core, meds) pair with core labs
  std::size_t diagnosis_codes = 10;
  std::size_t procedure_codes = 6;
  double period_hours = 24.0;
  std::size_t min_days = 2;
  std::size_t max_days = 5;
  double retest_probability = 0.8;
  double medication_effect = 0.8;
  double treat_probability = 0.6;
  double base_abnormal_min = 0.1;
  double base_abnormal_max = 0.4;
  double core_inclusion = 0.95;
  double extended_inclusion_start = 0.05;
  double extended_inclusion_end = 0.9;
  double ramp_hours = 96.0;
  double diagnosis_inclusion = 0.9;
  double stat_probability = 0.45;  // per stat slot; two slots per day
  double stat_inclusion = 0.75;
  double stat_core_inclusion = 0.15;
  double background_per_day_max = 8.0;
  FlagStyle flag_style = FlagStyle::tri;

  void validate() const;
  static SynthConfig from_config(const KeyValueConfig& cfg);
  // `synth.*` lines reflecting every field.
  std::string to_config_text() const;

  std::size_t stat_labs() const { return lab_codes - core_labs - extended_labs; }
  std::size_t paired_medications() const { return std::min(core_labs, medication_codes); }
  // Deterministic per-code base abnormal rate in [base_abnormal_min, base_abnormal_max].
  double base_abnormal(std::size_t lab) const;
  LabFlag abnormal_flag(std::size_t lab) const;
  double extended_inclusion(double t) const;
};

std::string lab_code(std::size_t index);
std::string medication_code(std::size_t index);
std::string diagnosis_code(std::size_t index);
std::string procedure_code(std::size_t index);

// Deterministic in (config, seed).
std::vector<Trajectory> generate_synthetic(const SynthConfig& config, std::uint64_t seed);

struct SynthSummary {
  std::size_t trajectories = 0;
  std::size_t instances = 0;
  std::size_t events = 0;
  double mean_targets = 0.0;
  std::map<std::string, double> label_marginals;  // fraction of instances containing the label
};

SynthSummary summarize(std::span<const Trajectory> trajectories,
                       LabelMode mode = LabelMode::code_flag);

}  // namespace trace
