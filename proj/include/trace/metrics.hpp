#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace trace {

// Scores and multi-hot targets laid out [instances x labels], row-major.
struct ScoreTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> scores;
  std::vector<double> targets;

  void check() const;
};

struct CountStats {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

// Micro-averaged F1 over every (instance, label) pair, predicting score >= threshold.
// Returns 0 when there are no true positives.
double f1_micro(const ScoreTable& table, double threshold);

// Micro-pooled average precision: sum_n (R_n - R_{n-1}) P_n over scores sorted
// descending, ties kept in row-major order. Throws DataError without positives.
double pr_auc_micro(const ScoreTable& table);

// Mean over instances of |relevant in top k| / min(k, labels). Equal scores
// rank the lower label id first.
double precision_at_k(const ScoreTable& table, std::size_t k);

// DCG over the predicted top k against an ideal DCG of min(k, m): all targets
// of an instance share one timestamp and so one ideal rank. Instances without
// targets are skipped.
double ndcg_at_k(const ScoreTable& table, std::size_t k);

// Per-instance number of labels with score >= threshold.
CountStats avg_predicted_count(const ScoreTable& table, double threshold);
// Per-instance number of target labels.
CountStats avg_true_count(const ScoreTable& table);

// Label indices of one row ordered by descending score, ties by ascending index.
std::vector<std::size_t> rank_labels(std::span<const double> scores);

}  // namespace trace
