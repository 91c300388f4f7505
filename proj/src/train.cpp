#include "trace/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "trace/errors.hpp"
#include "trace/optimizer.hpp"

namespace trace {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be at least 1");
  if (epochs == 0) throw ConfigError("train: epochs must be at least 1");
  if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be non-negative");
  if (!(ce_weight >= 0.0)) throw ConfigError("train: ce_weight must be non-negative");
  ratios.validate();
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("train: threshold must lie in (0, 1)");
  if (k == 0) throw ConfigError("train: k must be at least 1");
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) {
  TrainConfig c;
  c.learning_rate = cfg.get_double("train.learning_rate", c.learning_rate);
  c.batch_size = cfg.get_size("train.batch_size", c.batch_size);
  c.epochs = cfg.get_size("train.epochs", c.epochs);
  c.lambda = cfg.get_double("train.lambda", c.lambda);
  c.ce_weight = cfg.get_double("train.ce_weight", c.ce_weight);
  c.seed = cfg.get_size("train.seed", c.seed);
  c.ratios.train = cfg.get_double("train.split_train", c.ratios.train);
  c.ratios.val = cfg.get_double("train.split_val", c.ratios.val);
  c.ratios.test = cfg.get_double("train.split_test", c.ratios.test);
  c.patience = cfg.get_size("train.patience", c.patience);
  c.threshold = cfg.get_double("train.threshold", c.threshold);
  c.k = cfg.get_size("train.k", c.k);
  c.augment = cfg.get_bool("train.augment", c.augment);
  c.validate();
  return c;
}

std::string TrainConfig::to_config_text() const {
  std::ostringstream o;
  o << "train.learning_rate = " << format_double(learning_rate) << '\n'
    << "train.batch_size = " << batch_size << '\n'
    << "train.epochs = " << epochs << '\n'
    << "train.lambda = " << format_double(lambda) << '\n'
    << "train.ce_weight = " << format_double(ce_weight) << '\n'
    << "train.seed = " << seed << '\n'
    << "train.split_train = " << format_double(ratios.train) << '\n'
    << "train.split_val = " << format_double(ratios.val) << '\n'
    << "train.split_test = " << format_double(ratios.test) << '\n'
    << "train.patience = " << patience << '\n'
    << "train.threshold = " << format_double(threshold) << '\n'
    << "train.k = " << k << '\n'
    << "train.augment = " << (augment ? "true" : "false") << '\n';
  return o.str();
}

double median_panel_gap(std::span<const Trajectory> trajectories) {
  std::vector<double> gaps;
  for (const auto& traj : trajectories) {
    std::set<double> draw_times;
    for (const auto& e : traj.events) {
      if (e.type == EventType::lab) draw_times.insert(e.t);
    }
    for (auto it = draw_times.begin(); it != draw_times.end() && std::next(it) != draw_times.end();
         ++it) {
      gaps.push_back(*std::next(it) - *it);
    }
  }
  if (gaps.empty()) return 0.0;
  std::sort(gaps.begin(), gaps.end());
  const std::size_t mid = gaps.size() / 2;
  return gaps.size() % 2 ? gaps[mid] : 0.5 * (gaps[mid - 1] + gaps[mid]);
}

Dataset prepare_dataset(const std::vector<Trajectory>& trajectories, const TrainConfig& config,
                        LabelMode mode) {
  if (trajectories.empty()) throw DataError("no trajectories");
  auto sets = split_by_patient(trajectories, config.ratios, config.seed);
  Dataset data;
  data.vocab = Vocabulary::build(sets.train, mode);
  data.median_panel_gap = median_panel_gap(sets.train);
  for (const auto& traj : sets.train) {
    if (config.augment) {
      auto all = extract_all_instances(traj);
      if (all.empty()) ++data.unusable;
      for (auto& inst : all) data.train.push_back(std::move(inst));
    } else if (auto inst = extract_instance(traj)) {
      data.train.push_back(std::move(*inst));
    } else {
      ++data.unusable;
    }
  }
  auto last_only = [&](const std::vector<Trajectory>& from, std::vector<NowcastInstance>& to) {
    for (const auto& traj : from) {
      if (auto inst = extract_instance(traj)) {
        to.push_back(std::move(*inst));
      } else {
        ++data.unusable;
      }
    }
  };
  last_only(sets.val, data.val);
  last_only(sets.test, data.test);
  if (data.train.empty()) throw DataError("training split has no usable instances");
  return data;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream o;
  o << "epoch,train_loss,val_pr_auc,denoise_norm\n";
  for (const auto& r : history) {
    o << r.epoch << ',' << format_double(r.train_loss) << ','
      << (r.val_pr_auc ? format_double(*r.val_pr_auc) : std::string()) << ','
      << format_double(r.denoise_norm) << '\n';
  }
  return o.str();
}

namespace {

std::vector<NowcastInstance> gather(std::span<const NowcastInstance> all,
                                    std::span<const std::size_t> order, std::size_t begin,
                                    std::size_t end) {
  std::vector<NowcastInstance> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(all[order[i]]);
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

ScoreTable score_instances(const TraceModel& model, std::span<const NowcastInstance> instances,
                           const Vocabulary& vocab, std::size_t batch_size) {
  ScoreTable table;
  table.rows = instances.size();
  table.cols = model.num_labels();
  table.scores.reserve(table.rows * table.cols);
  table.targets.reserve(table.rows * table.cols);
  for (std::size_t begin = 0; begin < instances.size(); begin += batch_size) {
    const std::size_t end = std::min(instances.size(), begin + batch_size);
    auto batch = encode_batch(instances.subspan(begin, end - begin), vocab,
                              model.config().max_length, model.config().mask_time);
    Tensor probs = model.forward(batch);
    table.scores.insert(table.scores.end(), probs.data().begin(), probs.data().end());
    table.targets.insert(table.targets.end(), batch.labels.begin(), batch.labels.end());
  }
  return table;
}

double mean_loss(const TraceModel& model, std::span<const NowcastInstance> instances,
                 const Vocabulary& vocab, std::size_t batch_size, double lambda,
                 double ce_weight) {
  if (instances.empty()) throw DataError("mean_loss: no instances");
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t begin = 0; begin < instances.size(); begin += batch_size) {
    const std::size_t end = std::min(instances.size(), begin + batch_size);
    auto batch = encode_batch(instances.subspan(begin, end - begin), vocab,
                              model.config().max_length, model.config().mask_time);
    total += model.loss(batch, lambda, ce_weight).item();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

namespace {

// Shuffles `order`, then sorts each pool of kBucketBatches batches by history
// length so batches carry little padding, and finally shuffles the batches.
std::vector<std::pair<std::size_t, std::size_t>> epoch_batches(
    std::vector<std::size_t>& order, std::span<const NowcastInstance> instances,
    std::size_t batch_size, std::mt19937_64& rng) {
  constexpr std::size_t kBucketBatches = 8;
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t pool = batch_size * kBucketBatches;
  for (std::size_t begin = 0; begin < order.size(); begin += pool) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + pool));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      return instances[a].history.size() < instances[b].history.size();
    });
  }
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    spans.emplace_back(begin, std::min(order.size(), begin + batch_size));
  }
  std::shuffle(spans.begin(), spans.end(), rng);
  return spans;
}

}  // namespace

TrainResult train(const TraceModel& initial, std::span<const NowcastInstance> train_set,
                  std::span<const NowcastInstance> val_set, const Vocabulary& vocab,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DataError("train: empty training set");
  if (vocab.label_count() != initial.num_labels()) {
    throw DimensionError("train: vocabulary has " + std::to_string(vocab.label_count()) +
                         " labels, model has " + std::to_string(initial.num_labels()));
  }
  TrainResult result;
  TraceModel model = initial.clone();
  Adam adam(model.named_parameters(), AdamOptions{config.learning_rate});
  // Separate stream from initialization so the batch order does not depend on model size.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto spans = epoch_batches(order, train_set, config.batch_size, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& [begin, end] : spans) {
      ++step;
      auto instances = gather(train_set, order, begin, end);
      auto batch = encode_batch(instances, vocab, model.config().max_length,
                                model.config().mask_time);
      Tape tape;
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        Tensor loss = model.loss(batch, config.lambda, config.ce_weight);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          throw NumericError("step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                             "): loss is " + std::to_string(loss_value));
        }
        tape.backward(loss);
      }
      for (const auto& p : adam.parameters()) {
        if (p.trainable && p.tensor.has_grad() && !all_finite(p.tensor.grad())) {
          throw NumericError("step " + std::to_string(step) + ": non-finite gradient in " +
                             p.name);
        }
      }
      adam.step();
      for (const auto& p : adam.parameters()) {
        if (p.trainable && !all_finite(p.tensor.data())) {
          throw NumericError("step " + std::to_string(step) + ": non-finite values in " + p.name +
                             " after update");
        }
      }
      loss_sum += loss_value;
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(batches);
    record.denoise_norm = model.denoise_norm();
    if (!val_set.empty()) {
      record.val_pr_auc = pr_auc_micro(score_instances(model, val_set, vocab, config.batch_size));
    }
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    const bool improved =
        !record.val_pr_auc ||
        !result.best_val_pr_auc || *record.val_pr_auc > *result.best_val_pr_auc;
    if (improved) {
      result.model = model.clone();
      result.best_epoch = epoch;
      result.best_val_pr_auc = record.val_pr_auc;
      stale = 0;
    } else if (config.patience > 0 && ++stale >= config.patience) {
      break;
    }
  }
  std::ostringstream state;
  state << rng;
  result.rng_state = state.str();
  return result;
}

EvalReport evaluate(const ScoreTable& table, double threshold, std::size_t k) {
  if (table.rows == 0) throw DataError("evaluate: no instances");
  EvalReport r;
  r.instances = table.rows;
  r.threshold = threshold;
  r.k = k;
  r.f1 = f1_micro(table, threshold);
  r.pr_auc = pr_auc_micro(table);
  r.precision_at_k = precision_at_k(table, k);
  r.ndcg_at_k = ndcg_at_k(table, k);
  r.predicted_count = avg_predicted_count(table, threshold);
  r.true_count = avg_true_count(table);
  return r;
}

std::string EvalReport::to_text() const {
  std::ostringstream o;
  o << "variant = " << variant << '\n'
    << "seed = " << seed << '\n'
    << "instances = " << instances << '\n'
    << "threshold = " << format_double(threshold) << '\n'
    << "k = " << k << '\n'
    << "f1 = " << format_double(f1) << '\n'
    << "pr_auc = " << format_double(pr_auc) << '\n'
    << "precision_at_k = " << format_double(precision_at_k) << '\n'
    << "ndcg_at_k = " << format_double(ndcg_at_k) << '\n'
    << "predicted_count_mean = " << format_double(predicted_count.mean) << '\n'
    << "predicted_count_std = " << format_double(predicted_count.stddev) << '\n'
    << "true_count_mean = " << format_double(true_count.mean) << '\n'
    << "true_count_std = " << format_double(true_count.stddev) << '\n';
  return o.str();
}

std::string EvalReport::csv_header() {
  return "variant,seed,instances,threshold,k,f1,pr_auc,precision_at_k,ndcg_at_k,"
         "predicted_count_mean,predicted_count_std,true_count_mean,true_count_std";
}

std::string EvalReport::csv_row() const {
  std::ostringstream o;
  o << variant << ',' << seed << ',' << instances << ',' << format_double(threshold) << ',' << k
    << ',' << format_double(f1) << ',' << format_double(pr_auc) << ','
    << format_double(precision_at_k) << ',' << format_double(ndcg_at_k) << ','
    << format_double(predicted_count.mean) << ',' << format_double(predicted_count.stddev) << ','
    << format_double(true_count.mean) << ',' << format_double(true_count.stddev);
  return o.str();
}

std::string EvalReport::counts_line() const {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << "pred " << predicted_count.mean << " ± "
    << predicted_count.stddev << " | true " << true_count.mean << " ± " << true_count.stddev;
  return o.str();
}

std::vector<std::pair<std::string, Ablation>> ablation_variants() {
  return {{"full", parse_ablation("none")},
          {"w/o D", parse_ablation("d")},
          {"w/o P", parse_ablation("p")},
          {"w/o DP", parse_ablation("dp")},
          {"w/o DPM", parse_ablation("dpm")}};
}

const AblationRow& AblationTable::find(const std::string& variant) const {
  for (const auto& row : rows) {
    if (row.variant == variant) return row;
  }
  throw ContractError("ablation table has no variant '" + variant + "'");
}

namespace {

std::string delta_cell(double value, double reference) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(4) << value;
  if (reference > 0.0 && value != reference) {
    const double pct = 100.0 * (reference - value) / reference;
    o << (pct >= 0 ? " (↓ " : " (↑ ") << std::setprecision(2) << std::abs(pct) << "%)";
  }
  return o.str();
}

}  // namespace

std::string AblationTable::to_text() const {
  if (rows.empty()) return {};
  const EvalReport& full = rows.front().report;
  std::ostringstream o;
  o << std::left << std::setw(10) << "variant" << std::setw(22) << "PR-AUC" << std::setw(22)
    << "F1" << std::setw(22) << ("P@" + std::to_string(full.k)) << "NDCG@" << full.k << '\n';
  for (const auto& row : rows) {
    const auto& r = row.report;
    // setw counts bytes, and the arrows are multi-byte, so pad by hand.
    auto pad = [](std::string s, std::size_t width) {
      std::size_t glyphs = 0;
      for (unsigned char c : s) glyphs += (c & 0xC0) != 0x80;
      if (glyphs < width) s.append(width - glyphs, ' ');
      return s;
    };
    o << pad(row.variant, 10) << pad(delta_cell(r.pr_auc, full.pr_auc), 22)
      << pad(delta_cell(r.f1, full.f1), 22)
      << pad(delta_cell(r.precision_at_k, full.precision_at_k), 22)
      << delta_cell(r.ndcg_at_k, full.ndcg_at_k) << '\n';
  }
  return o.str();
}

std::string AblationTable::to_csv() const {
  std::ostringstream o;
  o << EvalReport::csv_header() << '\n';
  for (const auto& row : rows) o << row.report.csv_row() << '\n';
  return o.str();
}

AblationTable run_ablation(const std::vector<Trajectory>& trajectories, const ModelConfig& base,
                           const TrainConfig& config, const VariantCallback& on_epoch) {
  const Dataset data = prepare_dataset(trajectories, config, base.label_mode);
  if (data.test.empty()) throw DataError("ablation: test split is empty");
  AblationTable table;
  for (const auto& [name, ablation] : ablation_variants()) {
    ModelConfig mc = base;
    mc.ablation = ablation;
    TraceModel model(mc, data.vocab.token_count(), data.vocab.label_count(), config.seed);
    const std::string variant = name;
    auto result = train(model, data.train, data.val, data.vocab, config,
                        [&](const EpochRecord& r) {
                          if (on_epoch) on_epoch(variant, r);
                        });
    EvalReport report = evaluate(score_instances(result.model, data.test, data.vocab,
                                                 config.batch_size),
                                 config.threshold, config.k);
    report.variant = name;
    report.seed = config.seed;
    table.rows.push_back({name, ablation, report, std::move(result.history)});
  }
  return table;
}

}  // namespace trace
