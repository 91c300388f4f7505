#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "trace/errors.hpp"
#include "trace/split.hpp"
#include "trace/synthetic.hpp"
#include "trace/train.hpp"

using namespace trace;

namespace {

struct Item {
  std::string patient_id;
  int value = 0;
  bool operator==(const Item&) const = default;
};

std::vector<Item> items(std::size_t patients, std::size_t per_patient = 1) {
  std::vector<Item> out;
  for (std::size_t p = 0; p < patients; ++p)
    for (std::size_t i = 0; i < per_patient; ++i)
      out.push_back({"p" + std::to_string(p), static_cast<int>(p * per_patient + i)});
  return out;
}

ModelConfig small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.heads = 2;
  c.layers = 1;
  c.max_length = 48;
  c.decay_width = 4;
  return c;
}

// A small synthetic cohort shared by the training tests.
const Dataset& cohort() {
  static const Dataset data = [] {
    SynthConfig sc;
    sc.patients = 40;
    TrainConfig tc;
    return prepare_dataset(generate_synthetic(sc, 3), tc, LabelMode::code_flag);
  }();
  return data;
}

TrainConfig quick(std::size_t epochs = 1) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  return c;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

}  // namespace

TEST(Split, SizesFollowRatios) {
  auto sets = split_by_patient(items(100), SplitRatios{}, 1);
  EXPECT_EQ(sets.train.size(), 75u);
  EXPECT_EQ(sets.val.size(), 10u);
  EXPECT_EQ(sets.test.size(), 15u);
}

TEST(Split, DeterministicDisjointAndExhaustive) {
  const auto all = items(37, 3);
  auto a = split_by_patient(all, SplitRatios{}, 5);
  auto b = split_by_patient(all, SplitRatios{}, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);

  std::multiset<int> seen;
  std::map<std::string, int> home;
  int set_index = 0;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& it : *part) {
      seen.insert(it.value);
      auto [pos, fresh] = home.emplace(it.patient_id, set_index);
      EXPECT_EQ(pos->second, set_index) << it.patient_id << " appears in two sets";
    }
    ++set_index;
  }
  EXPECT_EQ(seen.size(), all.size());
  for (const auto& it : all) EXPECT_EQ(seen.count(it.value), 1u);

  auto c = split_by_patient(all, SplitRatios{}, 6);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_by_patient(items(2), SplitRatios{}, 1), DataError);
  EXPECT_THROW(split_by_patient(items(10), SplitRatios{0.5, 0.2, 0.2}, 1), ConfigError);
  EXPECT_NO_THROW(split_by_patient(items(3), SplitRatios{}, 1));
}

TEST(Dataset, VocabularyComesFromTrainingPatients) {
  SynthConfig sc;
  sc.patients = 40;
  const auto trajs = generate_synthetic(sc, 3);
  TrainConfig tc;
  const Dataset data = prepare_dataset(trajs, tc, LabelMode::code_flag);
  auto sets = split_by_patient(trajs, tc.ratios, tc.seed);
  EXPECT_EQ(data.vocab, Vocabulary::build(sets.train, LabelMode::code_flag));
  EXPECT_EQ(data.train.size() + data.unusable, sets.train.size());
  EXPECT_EQ(data.val.size(), sets.val.size());
  EXPECT_EQ(data.test.size(), sets.test.size());
  EXPECT_GT(data.median_panel_gap, 0.0);

  tc.augment = true;
  const Dataset augmented = prepare_dataset(trajs, tc, LabelMode::code_flag);
  EXPECT_GT(augmented.train.size(), data.train.size());
  EXPECT_EQ(augmented.val.size(), data.val.size());
  EXPECT_EQ(augmented.vocab, data.vocab);
}

TEST(Train, OneEpochOnEightInstancesLowersLoss) {
  const Dataset& data = cohort();
  std::vector<NowcastInstance> eight(data.train.begin(), data.train.begin() + 8);
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 1);
  TrainConfig tc = quick();
  const double before = mean_loss(model, eight, data.vocab, 8, tc.lambda);
  TrainResult result = train(model, eight, {}, data.vocab, tc);
  const double after = mean_loss(result.model, eight, data.vocab, 8, tc.lambda);
  EXPECT_LT(after, before);
  ASSERT_EQ(result.history.size(), 1u);
  EXPECT_FALSE(result.history[0].val_pr_auc.has_value());
}

TEST(Train, HeavyPenaltyShrinksMask) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 2);
  TrainConfig tc = quick(2);
  tc.lambda = 10.0;
  const double initial = model.denoise_norm();
  TrainResult result = train(model, data.train, {}, data.vocab, tc);
  EXPECT_LT(result.model.denoise_norm(), initial);
  EXPECT_LT(result.history[1].denoise_norm, result.history[0].denoise_norm);
}

TEST(Train, FrozenMaskStaysConstant) {
  const Dataset& data = cohort();
  ModelConfig mc = small_model();
  mc.ablation = parse_ablation("dpm");
  TraceModel model(mc, data.vocab.token_count(), data.vocab.label_count(), 2);
  TrainResult result = train(model, data.train, data.val, data.vocab, quick(2));
  for (const auto& r : result.history) EXPECT_EQ(r.denoise_norm, model.denoise_norm());
}

TEST(Train, BitwiseReproducible) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 3);
  TrainResult a = train(model, data.train, data.val, data.vocab, quick(2));
  TrainResult b = train(model, data.train, data.val, data.vocab, quick(2));
  const auto pa = a.model.named_parameters(), pb = b.model.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(same_bits(pa[i].tensor.data(), pb[i].tensor.data())) << pa[i].name;
  }
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_EQ(a.rng_state, b.rng_state);
}

TEST(Train, SeedChangesBatchOrder) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 3);
  TrainConfig other = quick();
  other.seed = 99;
  TrainResult a = train(model, data.train, {}, data.vocab, quick());
  TrainResult b = train(model, data.train, {}, data.vocab, other);
  EXPECT_NE(a.history[0].train_loss, b.history[0].train_loss);
}

TEST(Train, StopsWhenValidationStalls) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 4);
  // No loss at all: parameters never move, so validation never strictly improves.
  TrainConfig tc = quick(5);
  tc.ce_weight = 0.0;
  tc.lambda = 0.0;
  tc.patience = 2;
  TrainResult result = train(model, data.train, data.val, data.vocab, tc);
  EXPECT_EQ(result.history.size(), 3u);
  EXPECT_EQ(result.best_epoch, 1u);
}

TEST(Train, KeepsBestValidationEpoch) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 5);
  TrainResult result = train(model, data.train, data.val, data.vocab, quick(3));
  double best = -1.0;
  for (const auto& r : result.history) best = std::max(best, *r.val_pr_auc);
  EXPECT_EQ(*result.best_val_pr_auc, best);
  EXPECT_DOUBLE_EQ(pr_auc_micro(score_instances(result.model, data.val, data.vocab, 4)), best);
}

TEST(Train, NonFiniteLossNamesTheStep) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 6);
  model.head().bias.mutable_data()[0] = std::nan("");
  try {
    train(model, data.train, {}, data.vocab, quick());
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, DivergentStepIsCaught) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 7);
  TrainConfig tc = quick();
  tc.learning_rate = 1e300;
  try {
    train(model, data.train, {}, data.vocab, tc);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(Train, RejectsBadConfig) {
  const Dataset& data = cohort();
  TraceModel model(small_model(), data.vocab.token_count(), data.vocab.label_count(), 8);
  TrainConfig tc = quick();
  tc.learning_rate = 0.0;
  EXPECT_THROW(train(model, data.train, {}, data.vocab, tc), ConfigError);
  EXPECT_THROW(train(model, {}, {}, data.vocab, quick()), DataError);
  TraceModel wrong(small_model(), data.vocab.token_count(), data.vocab.label_count() + 1, 8);
  EXPECT_THROW(train(wrong, data.train, {}, data.vocab, quick()), DimensionError);
}

TEST(TrainConfig, TextRoundTrip) {
  TrainConfig c;
  c.learning_rate = 3e-4;
  c.augment = true;
  c.patience = 4;
  c.ratios = {0.6, 0.2, 0.2};
  std::istringstream in(c.to_config_text());
  EXPECT_EQ(TrainConfig::from_config(KeyValueConfig::parse(in)).to_config_text(), c.to_config_text());
}

TEST(Report, Formats) {
  ScoreTable t{2, 3, {0.9, 0.6, 0.2, 0.7, 0.1, 0.3}, {1, 0, 1, 1, 0, 0}};
  EvalReport r = evaluate(t, 0.5, 2);
  EXPECT_EQ(r.instances, 2u);
  EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.counts_line(), "pred 1.50 ± 0.50 | true 1.50 ± 0.50");
  EXPECT_NE(r.to_text().find("pr_auc = "), std::string::npos);
  const std::string header = EvalReport::csv_header();
  const std::string row = r.csv_row();
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(history_csv({}), "epoch,train_loss,val_pr_auc,denoise_norm\n");
}

TEST(Ablation, RunsEveryVariantInOrder) {
  SynthConfig sc;
  sc.patients = 24;
  const auto trajs = generate_synthetic(sc, 4);
  ModelConfig mc = small_model();
  mc.d_model = 8;
  AblationTable table = run_ablation(trajs, mc, quick(1));
  ASSERT_EQ(table.rows.size(), 5u);
  const std::vector<std::string> names = {"full", "w/o D", "w/o P", "w/o DP", "w/o DPM"};
  for (std::size_t i = 0; i < names.size(); ++i) {
    EXPECT_EQ(table.rows[i].variant, names[i]);
    EXPECT_EQ(table.rows[i].report.variant, names[i]);
  }
  EXPECT_TRUE(table.find("w/o DPM").ablation.disable_mask);
  EXPECT_THROW(table.find("w/o X"), ContractError);
  const std::string text = table.to_text();
  EXPECT_NE(text.find("w/o DP"), std::string::npos);
  EXPECT_TRUE(text.find("↓") != std::string::npos || text.find("↑") != std::string::npos);
  const std::string csv = table.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}
