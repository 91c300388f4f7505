#include "trace/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "trace/errors.hpp"

namespace trace {

void ScoreTable::check() const {
  if (scores.size() != rows * cols || targets.size() != rows * cols) {
    throw DimensionError("score table: expected " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " scores and targets, got " +
                         std::to_string(scores.size()) + " and " + std::to_string(targets.size()));
  }
}

namespace {

void check_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
}

void check_k(std::size_t k) {
  if (k == 0) throw ConfigError("k must be at least 1");
}

CountStats mean_std(const std::vector<double>& values) {
  CountStats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(var / n);
  return s;
}

}  // namespace

double f1_micro(const ScoreTable& table, double threshold) {
  table.check();
  check_threshold(threshold);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < table.scores.size(); ++i) {
    const bool predicted = table.scores[i] >= threshold;
    const bool actual = table.targets[i] > 0.5;
    if (predicted && actual) ++tp;
    if (predicted && !actual) ++fp;
    if (!predicted && actual) ++fn;
  }
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

double pr_auc_micro(const ScoreTable& table) {
  table.check();
  const std::size_t n = table.scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return table.scores[a] > table.scores[b];
  });
  std::size_t positives = 0;
  for (double y : table.targets) positives += y > 0.5 ? 1 : 0;
  if (positives == 0) throw DataError("pr_auc: no positive labels");

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < n; ++rank) {
    if (table.targets[order[rank]] > 0.5) {
      ++hits;
      // Recall steps by 1/positives exactly at each hit.
      ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(positives);
}

std::vector<std::size_t> rank_labels(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double precision_at_k(const ScoreTable& table, std::size_t k) {
  table.check();
  check_k(k);
  if (table.rows == 0) return 0.0;
  const std::size_t cutoff = std::min(k, table.cols);
  double total = 0.0;
  for (std::size_t r = 0; r < table.rows; ++r) {
    std::span<const double> row(table.scores.data() + r * table.cols, table.cols);
    const auto order = rank_labels(row);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < cutoff; ++j) hits += table.targets[r * table.cols + order[j]] > 0.5;
    total += static_cast<double>(hits) / static_cast<double>(cutoff);
  }
  return total / static_cast<double>(table.rows);
}

double ndcg_at_k(const ScoreTable& table, std::size_t k) {
  table.check();
  check_k(k);
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < table.rows; ++r) {
    const double* y = table.targets.data() + r * table.cols;
    std::size_t m = 0;
    for (std::size_t c = 0; c < table.cols; ++c) m += y[c] > 0.5;
    if (m == 0) continue;
    std::span<const double> row(table.scores.data() + r * table.cols, table.cols);
    const auto order = rank_labels(row);
    double dcg = 0.0;
    for (std::size_t j = 0; j < std::min(k, table.cols); ++j) {
      if (y[order[j]] > 0.5) dcg += 1.0 / std::log2(static_cast<double>(j) + 2.0);
    }
    total += dcg / static_cast<double>(std::min(k, m));
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

CountStats avg_predicted_count(const ScoreTable& table, double threshold) {
  table.check();
  check_threshold(threshold);
  std::vector<double> counts(table.rows, 0.0);
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (std::size_t c = 0; c < table.cols; ++c) {
      counts[r] += table.scores[r * table.cols + c] >= threshold ? 1.0 : 0.0;
    }
  }
  return mean_std(counts);
}

CountStats avg_true_count(const ScoreTable& table) {
  table.check();
  std::vector<double> counts(table.rows, 0.0);
  for (std::size_t r = 0; r < table.rows; ++r) {
    for (std::size_t c = 0; c < table.cols; ++c) {
      counts[r] += table.targets[r * table.cols + c] > 0.5 ? 1.0 : 0.0;
    }
  }
  return mean_std(counts);
}

}  // namespace trace
