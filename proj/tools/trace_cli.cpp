#include <iostream>

#include <CLI11.hpp>

#include "trace/commands.hpp"

namespace {

using namespace trace::cli;

struct RawCommon {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  std::string format = "text";
  CLI::Option* seed_option = nullptr;
};

void add_common(CLI::App* sub, RawCommon& raw) {
  sub->add_option("--config", raw.config, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", raw.overrides, "override a config key (key=value), repeatable");
  raw.seed_option = sub->add_option("--seed", raw.seed, "random seed");
  sub->add_option("--format", raw.format, "output format")->check(CLI::IsMember({"text", "csv"}));
}

CommonOptions to_common(const RawCommon& raw) {
  CommonOptions c;
  if (!raw.config.empty()) c.config = raw.config;
  c.overrides = raw.overrides;
  if (raw.seed_option && raw.seed_option->count() > 0) c.seed = raw.seed;
  c.format = parse_format(raw.format);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-aware Transformer for intra-visit lab nowcasting"};
  app.require_subcommand(1);

  RawCommon gen_raw, train_raw, eval_raw, now_raw, abl_raw;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "write a synthetic trajectory file");
  add_common(gen, gen_raw);
  gen->add_option("--out", gen_out, "output trajectory file")->required();

  std::string train_data, train_ckpt, train_ablate, train_log;
  auto* tr = app.add_subcommand("train", "split, train, evaluate on the test split, save a checkpoint");
  add_common(tr, train_raw);
  tr->add_option("--data", train_data, "trajectory file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out-checkpoint", train_ckpt, "checkpoint path")->required();
  auto* ablate_opt = tr->add_option("--ablate", train_ablate, "ablation variant")
                         ->check(CLI::IsMember({"none", "d", "p", "dp", "dpm"}));
  auto* log_opt = tr->add_option("--log", train_log, "per-epoch CSV (default <checkpoint>.log.csv)");

  std::string eval_ckpt, eval_data, eval_split = "test", eval_csv;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_raw);
  ev->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data)->required()->check(CLI::ExistingFile);
  ev->add_option("--split", eval_split, "test: the checkpoint's test split; all: every trajectory")
      ->check(CLI::IsMember({"test", "all"}));
  auto* eval_csv_opt = ev->add_option("--csv-out", eval_csv, "also write the report as CSV");

  std::string now_ckpt, now_history;
  double at_time = 0.0;
  std::size_t top_k = 0;
  auto* nc = app.add_subcommand("nowcast", "rank lab labels for the next draw of one trajectory");
  add_common(nc, now_raw);
  nc->add_option("--checkpoint", now_ckpt)->required()->check(CLI::ExistingFile);
  nc->add_option("--history-file", now_history)->required()->check(CLI::ExistingFile);
  auto* at_opt = nc->add_option("--at-time", at_time, "draw time in hours");
  auto* k_opt = nc->add_option("--top-k", top_k, "number of labels to print")->check(CLI::PositiveNumber);

  std::string abl_data, abl_csv;
  auto* ab = app.add_subcommand("ablate", "train and compare full, w/o D, w/o P, w/o DP, w/o DPM");
  add_common(ab, abl_raw);
  ab->add_option("--data", abl_data)->required()->check(CLI::ExistingFile);
  auto* abl_csv_opt = ab->add_option("--csv-out", abl_csv, "write the comparison table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  return guarded(
      [&]() -> int {
        if (gen->parsed()) {
          return cmd_generate({to_common(gen_raw), gen_out}, std::cout, std::cerr);
        }
        if (tr->parsed()) {
          TrainOptions o{to_common(train_raw), train_data, train_ckpt, std::nullopt, std::nullopt};
          if (ablate_opt->count()) o.ablate = train_ablate;
          if (log_opt->count()) o.log = train_log;
          return cmd_train(o, std::cout, std::cerr);
        }
        if (ev->parsed()) {
          EvalOptions o{to_common(eval_raw), eval_ckpt, eval_data, eval_split, std::nullopt};
          if (eval_csv_opt->count()) o.csv_out = eval_csv;
          return cmd_eval(o, std::cout, std::cerr);
        }
        if (nc->parsed()) {
          NowcastOptions o{to_common(now_raw), now_ckpt, now_history, std::nullopt, std::nullopt};
          if (at_opt->count()) o.at_time = at_time;
          if (k_opt->count()) o.top_k = top_k;
          return cmd_nowcast(o, std::cout, std::cerr);
        }
        AblateOptions o{to_common(abl_raw), abl_data, std::nullopt};
        if (abl_csv_opt->count()) o.csv_out = abl_csv;
        return cmd_ablate(o, std::cout, std::cerr);
      },
      std::cerr);
}
