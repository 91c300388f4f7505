#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "trace/config.hpp"

// Command implementations behind the `trace` executable. Each returns a
// process exit code and writes only to the given streams and the files
// named in its options.
namespace trace::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

enum class Format { text, csv };
Format parse_format(const std::string& text);

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;  // "key=value", applied after the file
  std::optional<std::uint64_t> seed;
  Format format = Format::text;
};

// Config file plus overrides. Every section is parsed so misspelt keys fail early.
KeyValueConfig resolve_config(const CommonOptions& options);

struct GenerateOptions {
  CommonOptions common;
  std::filesystem::path out;
};

struct TrainOptions {
  CommonOptions common;
  std::filesystem::path data;
  std::filesystem::path checkpoint;
  std::optional<std::string> ablate;  // d | p | dp | dpm
  std::optional<std::filesystem::path> log;  // default: <checkpoint>.log.csv
};

struct EvalOptions {
  CommonOptions common;
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::string split = "test";  // test | all
  std::optional<std::filesystem::path> csv_out;
};

struct NowcastOptions {
  CommonOptions common;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
  std::optional<double> at_time;
  std::optional<std::size_t> top_k;
};

struct AblateOptions {
  CommonOptions common;
  std::filesystem::path data;
  std::optional<std::filesystem::path> csv_out;
};

int cmd_generate(const GenerateOptions& options, std::ostream& out, std::ostream& err);
int cmd_train(const TrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalOptions& options, std::ostream& out, std::ostream& err);
int cmd_nowcast(const NowcastOptions& options, std::ostream& out, std::ostream& err);
int cmd_ablate(const AblateOptions& options, std::ostream& out, std::ostream& err);

// Runs `body`, mapping validation failures to exit 2 and numeric failures to
// exit 3 with a one-line message on `err`.
int guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace trace::cli
