#include "trace/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "trace/checkpoint.hpp"
#include "trace/errors.hpp"
#include "trace/io_util.hpp"
#include "trace/metrics.hpp"
#include "trace/model.hpp"
#include "trace/synthetic.hpp"
#include "trace/train.hpp"

namespace trace::cli {

Format parse_format(const std::string& text) {
  if (text == "text") return Format::text;
  if (text == "csv") return Format::csv;
  throw ConfigError("unknown format '" + text + "' (expected text|csv)");
}

KeyValueConfig resolve_config(const CommonOptions& options) {
  KeyValueConfig cfg;
  if (options.config) cfg = KeyValueConfig::load(*options.config);
  for (const auto& item : options.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + item + "' is not key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  if (options.seed) cfg.set("train.seed", std::to_string(*options.seed));
  // Touch every section once so unknown keys are reported whichever command runs.
  (void)SynthConfig::from_config(cfg);
  (void)ModelConfig::from_config(cfg);
  (void)TrainConfig::from_config(cfg);
  cfg.require_all_consumed();
  return cfg;
}

namespace {

std::string embedded_config(const std::string& text) {
  std::istringstream in(text);
  std::string out, line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

void print_report(const EvalReport& report, Format format, std::ostream& out) {
  if (format == Format::csv) {
    out << EvalReport::csv_header() << '\n' << report.csv_row() << '\n';
  } else {
    out << report.to_text() << "counts = " << report.counts_line() << '\n';
  }
}

std::vector<NowcastInstance> last_instances(const std::vector<Trajectory>& trajectories) {
  std::vector<NowcastInstance> out;
  for (const auto& traj : trajectories) {
    if (auto inst = extract_instance(traj)) out.push_back(std::move(*inst));
  }
  return out;
}

}  // namespace

int cmd_generate(const GenerateOptions& options, std::ostream& out, std::ostream& /*err*/) {
  const auto cfg = resolve_config(options.common);
  const SynthConfig synth = SynthConfig::from_config(cfg);
  const std::uint64_t seed = options.common.seed.value_or(7);
  const auto trajectories = generate_synthetic(synth, seed);
  write_trajectory_file(options.out, trajectories);

  const SynthSummary summary = summarize(trajectories);
  if (options.common.format == Format::csv) {
    out << "label,marginal\n";
    for (const auto& [label, p] : summary.label_marginals) out << label << ',' << format_double(p) << '\n';
    return kExitOk;
  }
  out << "trajectories = " << summary.trajectories << '\n'
      << "instances = " << summary.instances << '\n'
      << "events = " << summary.events << '\n'
      << "mean_targets = " << format_double(summary.mean_targets) << '\n'
      << "seed = " << seed << '\n';
  for (const auto& [label, p] : summary.label_marginals) {
    out << "marginal." << label << " = " << format_double(p) << '\n';
  }
  return kExitOk;
}

int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(options.common);
  ModelConfig model_config = ModelConfig::from_config(cfg);
  if (options.ablate) model_config.ablation = parse_ablation(*options.ablate);
  const TrainConfig train_config = TrainConfig::from_config(cfg);

  const auto trajectories = parse_trajectory_file(options.data);
  const Dataset data = prepare_dataset(trajectories, train_config, model_config.label_mode);
  if (data.test.empty()) throw DataError("test split is empty");
  TraceModel model(model_config, data.vocab.token_count(), data.vocab.label_count(),
                   train_config.seed);
  err << "train: " << data.train.size() << " instances, val " << data.val.size() << ", test "
      << data.test.size() << ", " << data.vocab.label_count() << " labels, ablation "
      << ablation_name(model_config.ablation) << '\n';
  auto result = train(model, data.train, data.val, data.vocab, train_config,
                      [&](const EpochRecord& r) {
                        err << "epoch " << r.epoch << " loss " << format_double(r.train_loss)
                            << " val_pr_auc "
                            << (r.val_pr_auc ? format_double(*r.val_pr_auc) : std::string("-"))
                            << " denoise " << format_double(r.denoise_norm) << '\n';
                      });

  std::filesystem::path log_path = options.log.value_or(options.checkpoint.string() + ".log.csv");
  write_file_atomic(log_path, embedded_config(model_config.to_config_text() +
                                              train_config.to_config_text()) +
                                  history_csv(result.history));

  Checkpoint ck;
  ck.train_config = train_config;
  ck.vocab = data.vocab;
  ck.model = result.model;
  ck.best_val_pr_auc = result.best_val_pr_auc;
  ck.median_panel_gap = data.median_panel_gap;
  ck.rng_state = result.rng_state;
  save_checkpoint(options.checkpoint, ck);

  EvalReport report = evaluate(score_instances(result.model, data.test, data.vocab,
                                               train_config.batch_size),
                               train_config.threshold, train_config.k);
  report.variant = ablation_name(model_config.ablation);
  report.seed = train_config.seed;
  print_report(report, options.common.format, out);
  return kExitOk;
}

int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(options.checkpoint);
  const auto trajectories = parse_trajectory_file(options.data);
  if (trajectories.empty()) throw DataError("no trajectories in " + options.data.string());

  std::vector<NowcastInstance> instances;
  if (options.split == "test") {
    instances = last_instances(
        split_by_patient(trajectories, ck.train_config.ratios, ck.train_config.seed).test);
  } else if (options.split == "all") {
    instances = last_instances(trajectories);
  } else {
    throw ConfigError("unknown split '" + options.split + "' (expected test|all)");
  }
  if (instances.empty()) throw DataError("no usable instances to evaluate");

  const ScoreTable table =
      score_instances(ck.model, instances, ck.vocab, ck.train_config.batch_size);
  EvalReport report = evaluate(table, ck.train_config.threshold, ck.train_config.k);
  report.variant = ablation_name(ck.model.config().ablation);
  report.seed = ck.train_config.seed;
  print_report(report, options.common.format, out);
  if (options.csv_out) {
    write_file_atomic(*options.csv_out, EvalReport::csv_header() + "\n" + report.csv_row() + "\n");
  }
  (void)err;
  return kExitOk;
}

int cmd_nowcast(const NowcastOptions& options, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(options.checkpoint);
  const auto trajectories = parse_trajectory_file(options.history);
  if (trajectories.size() != 1) {
    throw DataError("history file must hold exactly one trajectory, found " +
                    std::to_string(trajectories.size()));
  }
  const Trajectory& traj = trajectories.front();
  if (traj.events.empty()) throw DataError("history has no events");

  NowcastInstance inst;
  inst.patient_id = traj.patient_id;
  inst.visit_id = traj.visit_id;
  inst.history = traj.events;
  inst.target_time = options.at_time.value_or(traj.events.back().t + ck.median_panel_gap);
  if (!(inst.target_time >= traj.events.back().t)) {
    throw ConfigError("--at-time precedes the last history event");
  }

  const std::vector<NowcastInstance> one{inst};
  const auto batch = encode_batch(one, ck.vocab, ck.model.config().max_length,
                                  ck.model.config().mask_time);
  if (batch.unknown_tokens > 0) {
    err << "warning: " << batch.unknown_tokens << " unknown code(s) mapped to <unk>\n";
  }
  const Tensor probs = ck.model.forward(batch);
  const auto order = rank_labels(probs.data());
  const std::size_t k = std::min(options.top_k.value_or(ck.train_config.k), order.size());

  if (options.common.format == Format::csv) {
    out << "rank,label,probability\n";
    for (std::size_t j = 0; j < k; ++j) {
      out << j + 1 << ',' << ck.vocab.label(order[j]) << ',' << format_double(probs.data()[order[j]])
          << '\n';
    }
    return kExitOk;
  }
  out << "nowcast at t = " << format_double(inst.target_time) << " h\n";
  for (std::size_t j = 0; j < k; ++j) {
    out << std::setw(3) << j + 1 << "  " << std::left << std::setw(16)
        << ck.vocab.label(order[j]) << std::right << std::fixed << std::setprecision(4)
        << probs.data()[order[j]] << '\n';
    out.unsetf(std::ios::fixed);
  }
  return kExitOk;
}

int cmd_ablate(const AblateOptions& options, std::ostream& out, std::ostream& err) {
  const auto cfg = resolve_config(options.common);
  const ModelConfig model_config = ModelConfig::from_config(cfg);
  const TrainConfig train_config = TrainConfig::from_config(cfg);
  const auto trajectories = parse_trajectory_file(options.data);
  const AblationTable table =
      run_ablation(trajectories, model_config, train_config,
                   [&](const std::string& variant, const EpochRecord& r) {
                     err << variant << " epoch " << r.epoch << " loss "
                         << format_double(r.train_loss) << " val_pr_auc "
                         << (r.val_pr_auc ? format_double(*r.val_pr_auc) : std::string("-"))
                         << '\n';
                   });
  if (options.common.format == Format::csv) {
    out << table.to_csv();
  } else {
    out << table.to_text();
    for (const auto& row : table.rows) {
      out << row.variant << " counts: " << row.report.counts_line() << '\n';
    }
  }
  if (options.csv_out) write_file_atomic(*options.csv_out, table.to_csv());
  return kExitOk;
}

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const VersionError& e) {
    err << "version error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const VocabularyError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace trace::cli
