#pragma once

// Per-label logistic regression on hand-built recency features. Used to show
// that the synthetic set carries learnable signal above the label marginals.

#include <cmath>
#include <string>
#include <vector>

#include "trace/metrics.hpp"
#include "trace/synthetic.hpp"
#include "trace/train.hpp"

namespace trace::oracle {

// Features for label "<code>:<flag>" at an instance's target time.
inline std::vector<double> recency_features(const NowcastInstance& inst, const std::string& code,
                                            const std::string& flag, double period) {
  double last_lab = -1.0, first_lab = -1.0;
  for (const auto& e : inst.history) {
    if (e.type != EventType::lab) continue;
    if (first_lab < 0.0) first_lab = e.t;
    last_lab = e.t;
  }
  const std::string medication = "M" + code.substr(1);
  double same = 0, seen = 0, abnormal = 0, treated = 0;
  for (const auto& e : inst.history) {
    if (e.type == EventType::lab && e.t == last_lab && e.code == code) {
      seen = 1;
      if (to_string(*e.flag) == flag) same = 1;
      if (*e.flag != LabFlag::normal) abnormal = 1;
    }
    if (e.type == EventType::medication && e.t > last_lab && e.code == medication) treated = 1;
  }
  const double phase = std::fmod(inst.target_time - first_lab, period);
  const double routine = (phase < 1e-9 || period - phase < 1e-9) ? 1.0 : 0.0;
  const double elapsed = inst.target_time / 96.0;
  return {1.0, same, seen, abnormal, abnormal * treated, routine, elapsed, routine * elapsed,
          routine * same, routine * seen};
}

struct Headroom {
  double marginal = 0.0;  // PR-AUC of training-set label frequencies
  double logistic = 0.0;  // PR-AUC of the recency regression
};

inline Headroom recency_headroom(const Dataset& data, std::span<const NowcastInstance> eval,
                                 double period) {
  const Vocabulary& vocab = data.vocab;
  const std::size_t labels = vocab.label_count();
  std::vector<std::vector<double>> train_y, eval_y;
  for (const auto& inst : data.train) train_y.push_back(label_vector(inst.targets, vocab));
  for (const auto& inst : eval) eval_y.push_back(label_vector(inst.targets, vocab));

  std::vector<double> marginal(labels, 0.0);
  for (const auto& y : train_y) {
    for (std::size_t c = 0; c < labels; ++c) marginal[c] += y[c] / static_cast<double>(train_y.size());
  }
  ScoreTable base{eval.size(), labels, {}, {}};
  ScoreTable fitted = base;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    for (std::size_t c = 0; c < labels; ++c) {
      base.scores.push_back(marginal[c]);
      base.targets.push_back(eval_y[i][c]);
    }
  }
  fitted.targets = base.targets;
  fitted.scores.assign(base.scores.size(), 0.0);

  for (std::size_t c = 0; c < labels; ++c) {
    const std::string label = vocab.label(c);
    const auto colon = label.find(':');
    const std::string code = label.substr(0, colon), flag = label.substr(colon + 1);
    std::vector<std::vector<double>> x;
    for (const auto& inst : data.train) x.push_back(recency_features(inst, code, flag, period));
    std::vector<double> w(x.front().size(), 0.0);
    // Full-batch gradient descent with a small ridge term.
    for (int iter = 0; iter < 3000; ++iter) {
      std::vector<double> g(w.size(), 0.0);
      for (std::size_t n = 0; n < x.size(); ++n) {
        double z = 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * x[n][j];
        const double p = 1.0 / (1.0 + std::exp(-z));
        for (std::size_t j = 0; j < w.size(); ++j) g[j] += (p - train_y[n][c]) * x[n][j];
      }
      for (std::size_t j = 0; j < w.size(); ++j) {
        w[j] -= 0.5 * (g[j] / static_cast<double>(x.size()) + 1e-3 * w[j]);
      }
    }
    for (std::size_t i = 0; i < eval.size(); ++i) {
      const auto f = recency_features(eval[i], code, flag, period);
      double z = 0.0;
      for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * f[j];
      fitted.scores[i * labels + c] = 1.0 / (1.0 + std::exp(-z));
    }
  }
  return {pr_auc_micro(base), pr_auc_micro(fitted)};
}

}  // namespace trace::oracle
