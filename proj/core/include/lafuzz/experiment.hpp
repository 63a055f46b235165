// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lafuzz/fuzzer.hpp"
#include "lafuzz/stats.hpp"

namespace lafuzz::stats {

struct BenchmarkSpec {
  std::string name;
  std::string program_path;          // .asm (labels usable) or .bin (numeric targets)
  std::vector<std::string> targets;  // one trial series per target
  std::size_t seed_len = 64;         // all-zeros seed input
  std::uint64_t budget = 0;          // 0 = experiment default
};

struct ExperimentPlan {
  std::vector<BenchmarkSpec> benchmarks;
  std::vector<fuzz::Mode> configs;  // comparison rows pair each config with the last one
  std::size_t runs = 24;
  std::uint64_t budget = 2'000'000;
  std::uint64_t base_seed = 1;
  std::size_t jobs = 0;  // 0 = hardware concurrency
  std::uint64_t step_budget = vm::kDefaultStepBudget;
  std::size_t prefix_cap = lookahead::kDefaultPrefixCap;
  std::string out_dir = "bench_out";
  std::string log_dir;  // when set, per-run JSON-lines logs are written here
};

/// Samples for one (benchmark, target, config) cell: runs that never reached
/// the target are censored at the execution budget.
struct TrialSeries {
  std::string benchmark;
  std::string target;
  fuzz::Mode config = fuzz::Mode::BaselineA;
  std::vector<fuzz::FuzzRunResult> results;  // indexed by run
  std::vector<double> samples;               // executions-to-target, censored
};

struct ExperimentResult {
  std::vector<TrialSeries> series;
  std::vector<ComparisonRow> rows;
  double total_wall_s = 0;
  double total_lookahead_s = 0;
  std::uint64_t total_lookahead_calls = 0;
  std::uint64_t total_admissions = 0;
  std::string report_csv;       // deterministic; derived from samples only
  std::string report_markdown;  // deterministic; derived from samples only
};

/// Runs runs x configs fuzzing loops per (benchmark, target) on a bounded
/// worker pool. Run k uses rng seed base_seed ^ k, identical across configs.
ExperimentResult run_experiment(const ExperimentPlan& plan);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses the key = value experiment description (with [benchmark]
/// sections); relative program paths resolve against `base_dir`.
ExperimentPlan parse_experiment_config(std::string_view text, const std::string& base_dir);

}  // namespace lafuzz::stats
