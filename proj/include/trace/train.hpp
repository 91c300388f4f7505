#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trace/config.hpp"
#include "trace/metrics.hpp"
#include "trace/model.hpp"
#include "trace/split.hpp"
#include "trace/trajectory.hpp"
#include "trace/vocabulary.hpp"

namespace trace {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  double lambda = 1e-4;
  // Multiplies the CE term; 0 leaves only the denoise penalty.
  double ce_weight = 1.0;
  std::uint64_t seed = 7;
  SplitRatios ratios;
  std::size_t patience = 0;  // 0 disables early stopping
  double threshold = 0.5;
  std::size_t k = 5;
  // Also train on every intermediate panel of the training trajectories.
  bool augment = false;

  void validate() const;
  // Reads `train.*` keys.
  static TrainConfig from_config(const KeyValueConfig& cfg);
  std::string to_config_text() const;
};

struct Dataset {
  Vocabulary vocab;
  std::vector<NowcastInstance> train;
  std::vector<NowcastInstance> val;
  std::vector<NowcastInstance> test;
  std::size_t unusable = 0;  // trajectories without a usable target group
  // Median spacing of consecutive lab draw times in the training split.
  double median_panel_gap = 0.0;
};

// Patient-level split, vocabulary from the training trajectories only, then
// one instance per trajectory (plus intermediate panels for training when
// `augment` is set).
Dataset prepare_dataset(const std::vector<Trajectory>& trajectories, const TrainConfig& config,
                        LabelMode mode);

double median_panel_gap(std::span<const Trajectory> trajectories);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_pr_auc;
  double denoise_norm = 0.0;
};

std::string history_csv(std::span<const EpochRecord> history);

struct TrainResult {
  TraceModel model;  // best validation epoch, or the last epoch without a validation set
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::optional<double> best_val_pr_auc;
  std::string rng_state;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam on final_loss with a shuffled batch order drawn from `config.seed`.
// Throws NumericError naming the step and parameter block on a non-finite
// loss, gradient or update.
TrainResult train(const TraceModel& initial, std::span<const NowcastInstance> train_set,
                  std::span<const NowcastInstance> val_set, const Vocabulary& vocab,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// One optimizer-free pass: mean per-batch loss in batch order.
double mean_loss(const TraceModel& model, std::span<const NowcastInstance> instances,
                 const Vocabulary& vocab, std::size_t batch_size, double lambda,
                 double ce_weight = 1.0);

ScoreTable score_instances(const TraceModel& model, std::span<const NowcastInstance> instances,
                           const Vocabulary& vocab, std::size_t batch_size = 32);

struct EvalReport {
  std::string variant = "full";
  std::uint64_t seed = 0;
  std::size_t instances = 0;
  double threshold = 0.5;
  std::size_t k = 5;
  double f1 = 0.0;
  double pr_auc = 0.0;
  double precision_at_k = 0.0;
  double ndcg_at_k = 0.0;
  CountStats predicted_count;
  CountStats true_count;

  // Flat `key = value` lines.
  std::string to_text() const;
  static std::string csv_header();
  std::string csv_row() const;
  // "pred 20.49 ± 1.06 | true 18.21 ± 9.97"
  std::string counts_line() const;
};

EvalReport evaluate(const ScoreTable& table, double threshold, std::size_t k);

struct AblationRow {
  std::string variant;
  Ablation ablation;
  EvalReport report;
  std::vector<EpochRecord> history;
};

struct AblationTable {
  std::vector<AblationRow> rows;  // full, w/o D, w/o P, w/o DP, w/o DPM

  const AblationRow& find(const std::string& variant) const;
  // One row per variant with metric cells such as "0.6123 (↓ 4.10%)"
  // relative to the full model.
  std::string to_text() const;
  std::string to_csv() const;
};

// The five variants, in table order.
std::vector<std::pair<std::string, Ablation>> ablation_variants();

using VariantCallback = std::function<void(const std::string& variant, const EpochRecord&)>;

AblationTable run_ablation(const std::vector<Trajectory>& trajectories, const ModelConfig& base,
                           const TrainConfig& config, const VariantCallback& on_epoch = {});

}  // namespace trace
