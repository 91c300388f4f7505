#include "trace/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "trace/errors.hpp"

namespace trace {

namespace {

std::string code_name(const char* prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, index);
  return buf;
}

void check_probability(const char* name, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("synth.") + name + " must lie in [0, 1], got " + format_double(p));
  }
}

constexpr double kTick = 0.25;  // timestamps are whole quarter hours

double quantize(double t) { return std::floor(t / kTick) * kTick; }

enum class GroupKind { routine, stat };

struct LabGroup {
  double t;
  GroupKind kind;
};

class Simulator {
 public:
  Simulator(const SynthConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

  Trajectory patient(std::size_t index) {
    Trajectory traj;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "P%04zu", index);
    traj.patient_id = buf;
    traj.visit_id = std::string(buf) + "-V1";

    const std::size_t days = uniform_int(cfg_.min_days, cfg_.max_days);
    const double period = cfg_.period_hours;
    const double phase = quantize(uniform(0.0, period));
    const double intensity = uniform(0.0, cfg_.background_per_day_max);

    std::vector<MedicalEvent> events;
    std::set<std::size_t> boosted;  // extended labs raised by a diagnosis
    const std::size_t n_diag = std::min<std::size_t>(cfg_.diagnosis_codes, bernoulli(0.5) ? 2 : 1);
    std::set<std::size_t> diags;
    while (diags.size() < n_diag) diags.insert(uniform_int(0, cfg_.diagnosis_codes - 1));
    for (std::size_t d : diags) {
      events.push_back({diagnosis_code(d), EventType::diagnosis, std::nullopt, 0.0});
      if (cfg_.extended_labs > 0) boosted.insert(cfg_.core_labs + d % cfg_.extended_labs);
    }

    std::vector<LabGroup> groups;
    for (std::size_t day = 0; day < days; ++day) {
      const double start = phase + period * static_cast<double>(day);
      groups.push_back({start, GroupKind::routine});
      std::vector<double> stats;
      for (int slot = 0; slot < 2; ++slot) {
        if (!bernoulli(cfg_.stat_probability)) continue;
        const double t = quantize(start + uniform(2.0, period - 2.0));
        bool clash = false;
        for (double s : stats) clash = clash || std::abs(s - t) < 1.0;
        if (!clash) stats.push_back(t);
      }
      std::sort(stats.begin(), stats.end());
      for (double t : stats) groups.push_back({t, GroupKind::stat});
    }

    std::set<std::size_t> abnormal;  // labs abnormal in the previous group
    std::set<std::size_t> treated;   // paired meds given since the previous group
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const LabGroup& group = groups[g];
      if (g > 0) {
        const double prev = groups[g - 1].t;
        treated.clear();
        for (std::size_t lab : abnormal) {
          if (lab < cfg_.paired_medications() && bernoulli(cfg_.treat_probability)) {
            events.push_back({medication_code(lab), EventType::medication, std::nullopt,
                              between(prev, group.t)});
            treated.insert(lab);
          }
        }
        add_background(events, prev, group.t, intensity);
      }
      abnormal = draw_group(events, group, abnormal, treated, boosted);
    }

    // Cut after a random group other than the first.
    const std::size_t last = uniform_int(1, groups.size() - 1);
    const double cutoff = groups[last].t;
    std::erase_if(events, [cutoff](const MedicalEvent& e) { return e.t > cutoff; });
    std::stable_sort(events.begin(), events.end(),
                     [](const MedicalEvent& a, const MedicalEvent& b) { return a.t < b.t; });
    traj.events = std::move(events);
    return traj;
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  std::size_t uniform_int(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

  // A quarter-hour tick strictly inside (lo, hi).
  double between(double lo, double hi) {
    const auto steps = static_cast<std::size_t>(std::llround((hi - lo) / kTick));
    if (steps < 2) return lo + (hi - lo) / 2.0;
    return lo + kTick * static_cast<double>(uniform_int(1, steps - 1));
  }

  void add_background(std::vector<MedicalEvent>& events, double lo, double hi, double intensity) {
    const double expected = intensity * (hi - lo) / cfg_.period_hours;
    const std::size_t count = uniform_int(0, static_cast<std::size_t>(std::llround(2.0 * expected)));
    const std::size_t unpaired = cfg_.medication_codes - cfg_.paired_medications();
    for (std::size_t i = 0; i < count; ++i) {
      const double t = between(lo, hi);
      const bool med = unpaired > 0 && (cfg_.procedure_codes == 0 || bernoulli(0.5));
      if (med) {
        events.push_back({medication_code(cfg_.paired_medications() + uniform_int(0, unpaired - 1)),
                          EventType::medication, std::nullopt, t});
      } else if (cfg_.procedure_codes > 0) {
        events.push_back({procedure_code(uniform_int(0, cfg_.procedure_codes - 1)),
                          EventType::procedure, std::nullopt, t});
      }
    }
  }

  double inclusion(std::size_t lab, GroupKind kind, double t, const std::set<std::size_t>& boosted) const {
    const bool core = lab < cfg_.core_labs;
    const bool extended = !core && lab < cfg_.core_labs + cfg_.extended_labs;
    if (kind == GroupKind::stat) {
      if (core) return cfg_.stat_core_inclusion;
      return extended ? 0.0 : cfg_.stat_inclusion;
    }
    if (core) return cfg_.core_inclusion;
    if (!extended) return 0.0;
    const double ramp = cfg_.extended_inclusion(t);
    return boosted.contains(lab) ? std::max(ramp, cfg_.diagnosis_inclusion) : ramp;
  }

  std::set<std::size_t> draw_group(std::vector<MedicalEvent>& events, const LabGroup& group,
                                   const std::set<std::size_t>& prev_abnormal,
                                   const std::set<std::size_t>& treated,
                                   const std::set<std::size_t>& boosted) {
    std::set<std::size_t> now_abnormal;
    std::size_t drawn = 0;
    for (std::size_t lab = 0; lab < cfg_.lab_codes; ++lab) {
      const double relief = treated.contains(lab) ? 1.0 - cfg_.medication_effect : 1.0;
      bool included = false;
      bool is_abnormal = false;
      if (prev_abnormal.contains(lab) && bernoulli(cfg_.retest_probability * relief)) {
        included = true;
        is_abnormal = true;
      } else if (bernoulli(inclusion(lab, group.kind, group.t, boosted))) {
        included = true;
        is_abnormal = bernoulli(cfg_.base_abnormal(lab) * relief);
      }
      if (!included) continue;
      ++drawn;
      emit(events, lab, is_abnormal, group.t);
      if (is_abnormal) now_abnormal.insert(lab);
    }
    if (drawn == 0) {
      const std::size_t lab = group.kind == GroupKind::stat && cfg_.stat_labs() > 0
                                  ? cfg_.core_labs + cfg_.extended_labs +
                                        uniform_int(0, cfg_.stat_labs() - 1)
                                  : uniform_int(0, cfg_.core_labs - 1);
      const bool is_abnormal = bernoulli(cfg_.base_abnormal(lab));
      emit(events, lab, is_abnormal, group.t);
      if (is_abnormal) now_abnormal.insert(lab);
    }
    return now_abnormal;
  }

  void emit(std::vector<MedicalEvent>& events, std::size_t lab, bool is_abnormal, double t) const {
    LabFlag flag = LabFlag::normal;
    if (is_abnormal) {
      flag = cfg_.flag_style == FlagStyle::binary ? LabFlag::abnormal : cfg_.abnormal_flag(lab);
    }
    events.push_back({lab_code(lab), EventType::lab, flag, t});
  }

  const SynthConfig& cfg_;
  std::mt19937_64 rng_;
};

}  // namespace

std::string lab_code(std::size_t index) { return code_name("L", index); }
std::string medication_code(std::size_t index) { return code_name("M", index); }
std::string diagnosis_code(std::size_t index) { return code_name("D", index); }
std::string procedure_code(std::size_t index) { return code_name("PR", index); }

double SynthConfig::base_abnormal(std::size_t lab) const {
  // Golden-ratio spacing spreads rates evenly without an RNG.
  const double frac = std::fmod(static_cast<double>(lab) * 0.6180339887498949, 1.0);
  return base_abnormal_min + (base_abnormal_max - base_abnormal_min) * frac;
}

LabFlag SynthConfig::abnormal_flag(std::size_t lab) const {
  return lab % 2 == 0 ? LabFlag::high : LabFlag::low;
}

double SynthConfig::extended_inclusion(double t) const {
  const double progress = ramp_hours > 0.0 ? std::clamp(t / ramp_hours, 0.0, 1.0) : 1.0;
  return extended_inclusion_start + (extended_inclusion_end - extended_inclusion_start) * progress;
}

void SynthConfig::validate() const {
  if (patients == 0) throw ConfigError("synth.patients must be positive");
  if (core_labs == 0) throw ConfigError("synth.core_labs must be positive");
  if (core_labs + extended_labs > lab_codes) {
    throw ConfigError("synth.core_labs + synth.extended_labs exceeds synth.lab_codes");
  }
  if (diagnosis_codes == 0) throw ConfigError("synth.diagnosis_codes must be positive");
  if (!(period_hours > 4.0) || !std::isfinite(period_hours)) {
    throw ConfigError("synth.period_hours must exceed 4");
  }
  if (min_days < 2 || max_days < min_days) {
    throw ConfigError("synth.min_days must be >= 2 and <= synth.max_days");
  }
  check_probability("retest_probability", retest_probability);
  check_probability("medication_effect", medication_effect);
  check_probability("treat_probability", treat_probability);
  check_probability("base_abnormal_min", base_abnormal_min);
  check_probability("base_abnormal_max", base_abnormal_max);
  if (base_abnormal_min > base_abnormal_max) {
    throw ConfigError("synth.base_abnormal_min exceeds synth.base_abnormal_max");
  }
  check_probability("core_inclusion", core_inclusion);
  check_probability("extended_inclusion_start", extended_inclusion_start);
  check_probability("extended_inclusion_end", extended_inclusion_end);
  check_probability("diagnosis_inclusion", diagnosis_inclusion);
  check_probability("stat_probability", stat_probability);
  check_probability("stat_inclusion", stat_inclusion);
  check_probability("stat_core_inclusion", stat_core_inclusion);
  if (ramp_hours < 0.0) throw ConfigError("synth.ramp_hours must be non-negative");
  if (background_per_day_max < 0.0) {
    throw ConfigError("synth.background_per_day_max must be non-negative");
  }
}

SynthConfig SynthConfig::from_config(const KeyValueConfig& cfg) {
  SynthConfig c;
  c.patients = cfg.get_size("synth.patients", c.patients);
  c.lab_codes = cfg.get_size("synth.lab_codes", c.lab_codes);
  c.core_labs = cfg.get_size("synth.core_labs", c.core_labs);
  c.extended_labs = cfg.get_size("synth.extended_labs", c.extended_labs);
  c.medication_codes = cfg.get_size("synth.medication_codes", c.medication_codes);
  c.diagnosis_codes = cfg.get_size("synth.diagnosis_codes", c.diagnosis_codes);
  c.procedure_codes = cfg.get_size("synth.procedure_codes", c.procedure_codes);
  c.period_hours = cfg.get_double("synth.period_hours", c.period_hours);
  c.min_days = cfg.get_size("synth.min_days", c.min_days);
  c.max_days = cfg.get_size("synth.max_days", c.max_days);
  c.retest_probability = cfg.get_double("synth.retest_probability", c.retest_probability);
  c.medication_effect = cfg.get_double("synth.medication_effect", c.medication_effect);
  c.treat_probability = cfg.get_double("synth.treat_probability", c.treat_probability);
  c.base_abnormal_min = cfg.get_double("synth.base_abnormal_min", c.base_abnormal_min);
  c.base_abnormal_max = cfg.get_double("synth.base_abnormal_max", c.base_abnormal_max);
  c.core_inclusion = cfg.get_double("synth.core_inclusion", c.core_inclusion);
  c.extended_inclusion_start =
      cfg.get_double("synth.extended_inclusion_start", c.extended_inclusion_start);
  c.extended_inclusion_end = cfg.get_double("synth.extended_inclusion_end", c.extended_inclusion_end);
  c.ramp_hours = cfg.get_double("synth.ramp_hours", c.ramp_hours);
  c.diagnosis_inclusion = cfg.get_double("synth.diagnosis_inclusion", c.diagnosis_inclusion);
  c.stat_probability = cfg.get_double("synth.stat_probability", c.stat_probability);
  c.stat_inclusion = cfg.get_double("synth.stat_inclusion", c.stat_inclusion);
  c.stat_core_inclusion = cfg.get_double("synth.stat_core_inclusion", c.stat_core_inclusion);
  c.background_per_day_max = cfg.get_double("synth.background_per_day_max", c.background_per_day_max);
  const std::string style = cfg.get_string("synth.flag_style", "tri");
  if (style == "binary") {
    c.flag_style = FlagStyle::binary;
  } else if (style == "tri") {
    c.flag_style = FlagStyle::tri;
  } else {
    throw ConfigError("synth.flag_style must be 'binary' or 'tri', got '" + style + "'");
  }
  c.validate();
  return c;
}

std::string SynthConfig::to_config_text() const {
  std::ostringstream o;
  o << "synth.patients = " << patients << '\n'
    << "synth.lab_codes = " << lab_codes << '\n'
    << "synth.core_labs = " << core_labs << '\n'
    << "synth.extended_labs = " << extended_labs << '\n'
    << "synth.medication_codes = " << medication_codes << '\n'
    << "synth.diagnosis_codes = " << diagnosis_codes << '\n'
    << "synth.procedure_codes = " << procedure_codes << '\n'
    << "synth.period_hours = " << format_double(period_hours) << '\n'
    << "synth.min_days = " << min_days << '\n'
    << "synth.max_days = " << max_days << '\n'
    << "synth.retest_probability = " << format_double(retest_probability) << '\n'
    << "synth.medication_effect = " << format_double(medication_effect) << '\n'
    << "synth.treat_probability = " << format_double(treat_probability) << '\n'
    << "synth.base_abnormal_min = " << format_double(base_abnormal_min) << '\n'
    << "synth.base_abnormal_max = " << format_double(base_abnormal_max) << '\n'
    << "synth.core_inclusion = " << format_double(core_inclusion) << '\n'
    << "synth.extended_inclusion_start = " << format_double(extended_inclusion_start) << '\n'
    << "synth.extended_inclusion_end = " << format_double(extended_inclusion_end) << '\n'
    << "synth.ramp_hours = " << format_double(ramp_hours) << '\n'
    << "synth.diagnosis_inclusion = " << format_double(diagnosis_inclusion) << '\n'
    << "synth.stat_probability = " << format_double(stat_probability) << '\n'
    << "synth.stat_inclusion = " << format_double(stat_inclusion) << '\n'
    << "synth.stat_core_inclusion = " << format_double(stat_core_inclusion) << '\n'
    << "synth.background_per_day_max = " << format_double(background_per_day_max) << '\n'
    << "synth.flag_style = " << (flag_style == FlagStyle::binary ? "binary" : "tri") << '\n';
  return o.str();
}

std::vector<Trajectory> generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  Simulator sim(config, seed);
  std::vector<Trajectory> out;
  out.reserve(config.patients);
  for (std::size_t i = 0; i < config.patients; ++i) out.push_back(sim.patient(i));
  return out;
}

SynthSummary summarize(std::span<const Trajectory> trajectories, LabelMode mode) {
  SynthSummary s;
  s.trajectories = trajectories.size();
  std::size_t targets = 0;
  for (const auto& traj : trajectories) {
    s.events += traj.events.size();
    auto inst = extract_instance(traj);
    if (!inst) continue;
    ++s.instances;
    std::set<std::string> seen;
    for (const auto& e : inst->targets) seen.insert(label_token(e, mode));
    targets += seen.size();
    for (const auto& l : seen) s.label_marginals[l] += 1.0;
  }
  if (s.instances > 0) {
    s.mean_targets = static_cast<double>(targets) / static_cast<double>(s.instances);
    for (auto& [label, count] : s.label_marginals) count /= static_cast<double>(s.instances);
  }
  return s;
}

}  // namespace trace
