#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bdd/checks.hpp"
#include "bdd/experiment.hpp"

namespace bdd {

// Shared flags of the experiment subcommands.
struct CommandOptions {
  std::optional<std::filesystem::path> config;  // built-in defaults when absent
  std::filesystem::path out = "bdd_out";
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::string> mode;
  bool timing = true;     // sweep: wall_time_s in the CSVs and teacher_metrics.json, else 0/absent
  std::size_t threads = 1;
};

// Loads the config and applies --seeds / --mode.
ExperimentConfig resolve_config(const CommandOptions& opts);

std::vector<std::uint64_t> parse_seed_list(const std::string& text);

// Each command returns the process exit code and writes its artifacts
// under the output directory, creating it if needed.

/// gradcheck.json; nonzero when any loss exceeds the tolerance.
int cmd_gradcheck(const GradcheckOptions& opts, const std::filesystem::path& out, std::ostream& log);

/// properties.json; nonzero when any invariant fails.
int cmd_properties(const PropertyOptions& opts, const std::filesystem::path& out, std::ostream& log);

/// train.bin, val.bin and data.json.
int cmd_gen_data(const CommandOptions& opts, std::ostream& log);

/// teacher.ckpt (loaded when present, else trained with teacher_metrics.json),
/// student.ckpt, metrics.json, timing.json and histogram.json.
int cmd_distill(const CommandOptions& opts, std::ostream& log);

/// baseline.csv, alpha_sweep.csv, tau_sweep.csv, their *_summary.csv files,
/// delta_ce_kd.csv and delta_kd_bdd.csv.
int cmd_sweep(const CommandOptions& opts, std::ostream& log);

/// eval.json with the val metric of every checkpoint found in the output
/// directory.
int cmd_eval(const CommandOptions& opts, std::ostream& log);

}  // namespace bdd
