// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/experiment.hpp"

#include <array>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "lafuzz/assembler.hpp"

namespace lafuzz::stats {

namespace {

struct LoadedBenchmark {
  vm::Program program;
  std::map<std::string, vm::Loc> symbols;
};

LoadedBenchmark load_program(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open program file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  LoadedBenchmark lb;
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".bin") {
    lb.program = vm::decode_program(
        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  } else {
    vm::AsmResult asmres = vm::assemble(text);
    lb.program = std::move(asmres.program);
    lb.symbols = std::move(asmres.symbols);
  }
  return lb;
}

vm::Loc resolve_target(const LoadedBenchmark& lb, const std::string& spec) {
  auto it = lb.symbols.find(spec);
  if (it != lb.symbols.end()) return it->second;
  vm::Loc loc = 0;
  auto [ptr, ec] = std::from_chars(spec.data(), spec.data() + spec.size(), loc);
  if (ec != std::errc() || ptr != spec.data() + spec.size())
    throw ConfigError("unknown target '" + spec + "'");
  return loc;
}

std::string fmt(double v, const char* spec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan) {
  if (plan.benchmarks.empty()) throw ConfigError("no benchmarks configured");
  if (plan.configs.empty()) throw ConfigError("no configs configured");

  ExperimentResult result;

  // Load every program once; trials share it read-only.
  std::vector<LoadedBenchmark> loaded;
  loaded.reserve(plan.benchmarks.size());
  for (const auto& b : plan.benchmarks) loaded.push_back(load_program(b.program_path));

  struct Job {
    std::size_t series_index;
    std::size_t run_index;
    std::size_t bench_index;
    vm::Loc target;
    std::uint64_t budget;
  };
  std::vector<Job> jobs;

  for (std::size_t bi = 0; bi < plan.benchmarks.size(); ++bi) {
    const BenchmarkSpec& bench = plan.benchmarks[bi];
    const std::uint64_t budget = bench.budget ? bench.budget : plan.budget;
    for (const std::string& target_spec : bench.targets) {
      const vm::Loc target = resolve_target(loaded[bi], target_spec);
      for (fuzz::Mode config : plan.configs) {
        TrialSeries series;
        series.benchmark = bench.name;
        series.target = target_spec;
        series.config = config;
        series.results.resize(plan.runs);
        series.samples.resize(plan.runs);
        const std::size_t si = result.series.size();
        result.series.push_back(std::move(series));
        for (std::size_t run = 0; run < plan.runs; ++run)
          jobs.push_back({si, run, bi, target, budget});
      }
    }
  }

  if (!plan.log_dir.empty()) std::filesystem::create_directories(plan.log_dir);

  std::atomic<std::size_t> next_job{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t j = next_job.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      TrialSeries& series = result.series[job.series_index];
      const BenchmarkSpec& bench = plan.benchmarks[job.bench_index];

      const absint::TargetSet targets =
          absint::TargetSet::build(loaded[job.bench_index].program, std::array{job.target});

      std::vector<std::vector<std::uint8_t>> seeds{
          std::vector<std::uint8_t>(bench.seed_len, 0)};

      fuzz::ScheduleConfig cfg;
      cfg.mode = series.config;

      fuzz::FuzzOptions opts;
      opts.budget_executions = job.budget;
      opts.rng_seed = plan.base_seed ^ static_cast<std::uint64_t>(job.run_index);
      opts.step_budget = plan.step_budget;
      opts.prefix_cap = plan.prefix_cap;
      opts.stop_on_target = true;

      std::ofstream log;
      if (!plan.log_dir.empty()) {
        const std::string name = series.benchmark + "__" + series.target + "__" +
                                 fuzz::mode_name(series.config) + "__run" +
                                 std::to_string(job.run_index) + ".jsonl";
        log.open(std::filesystem::path(plan.log_dir) / name, std::ios::binary);
        opts.log = &log;
      }

      const fuzz::FuzzRunResult r = fuzz::fuzz_loop(loaded[job.bench_index].program, seeds,
                                                    targets, cfg, opts);
      series.results[job.run_index] = r;
      series.samples[job.run_index] =
          r.executions_to_target ? static_cast<double>(*r.executions_to_target)
                                 : static_cast<double>(job.budget);
    }
  };

  std::size_t n_workers = plan.jobs ? plan.jobs : std::thread::hardware_concurrency();
  n_workers = std::max<std::size_t>(1, std::min(n_workers, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const TrialSeries& s : result.series) {
    for (const auto& r : s.results) {
      result.total_wall_s += r.wall_time_s;
      result.total_lookahead_s += r.lookahead_time_s;
      result.total_lookahead_calls += r.lookahead_calls;
      result.total_admissions += r.admissions;
    }
  }

  // Comparison rows: every non-final config against the final one, per
  // (benchmark, target).
  const fuzz::Mode y_config = plan.configs.back();
  for (std::size_t bi = 0; bi < plan.benchmarks.size(); ++bi) {
    for (const std::string& target_spec : plan.benchmarks[bi].targets) {
      const TrialSeries* y_series = nullptr;
      for (const TrialSeries& s : result.series) {
        if (s.benchmark == plan.benchmarks[bi].name && s.target == target_spec &&
            s.config == y_config) {
          y_series = &s;
          break;
        }
      }
      for (const TrialSeries& s : result.series) {
        if (&s == y_series || s.benchmark != plan.benchmarks[bi].name ||
            s.target != target_spec)
          continue;
        ComparisonRow row;
        row.benchmark = s.benchmark;
        row.target = s.target;
        row.config_x = fuzz::mode_name(s.config);
        row.config_y = fuzz::mode_name(y_series->config);
        row.t_x = median(s.samples);
        row.t_y = median(y_series->samples);
        row.speedup = row.t_y == 0 ? 0 : row.t_x / row.t_y;
        row.p_value = mann_whitney_u(s.samples, y_series->samples);
        row.a12_x = a12(s.samples, y_series->samples);
        row.a12_y = a12(y_series->samples, s.samples);
        result.rows.push_back(std::move(row));
      }
    }
  }

  // CSV report.
  {
    std::string csv = "benchmark,target,config_x,config_y,t_x,t_y,speedup,p_value,a12_x,a12_y\n";
    for (const ComparisonRow& r : result.rows) {
      csv += r.benchmark + "," + r.target + "," + r.config_x + "," + r.config_y + "," +
             fmt(r.t_x, "%.1f") + "," + fmt(r.t_y, "%.1f") + "," + fmt(r.speedup, "%.2f") + "," +
             fmt(r.p_value, "%.4f") + "," + fmt(r.a12_x, "%.2f") + "," + fmt(r.a12_y, "%.2f") +
             "\n";
    }
    result.report_csv = std::move(csv);
  }

  // Markdown report.
  {
    std::string md;
    md += "| Benchmark | Target | T_X (X) | T_Y (Y) | T_X/T_Y | p | A12_X | A12_Y |\n";
    md += "|---|---|---|---|---|---|---|---|\n";
    for (const ComparisonRow& r : result.rows) {
      const bool significant = r.p_value < 0.05;
      std::string tx = fmt(r.t_x, "%.1f") + " (" + r.config_x + ")";
      std::string ty = fmt(r.t_y, "%.1f") + " (" + r.config_y + ")";
      if (significant) {
        if (r.t_x < r.t_y)
          tx = "**" + tx + "**";
        else
          ty = "**" + ty + "**";
      }
      md += "| " + r.benchmark + " | " + r.target + " | " + tx + " | " + ty + " | " +
            fmt(r.speedup, "%.2f") + " | " + fmt(r.p_value, "%.4f") + " | " +
            fmt(r.a12_x, "%.2f") + " | " + fmt(r.a12_y, "%.2f") + " |\n";
    }
    md += "\nTimes are executions to target; medians over " + std::to_string(plan.runs) +
          " runs. Bold marks the faster side when p < 0.05. Runs that never reached the "
          "target are censored at the execution budget and enter the U test as ordinary "
          "(tied) samples.\n";
    result.report_markdown = std::move(md);
  }

  return result;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const std::size_t comma = v.find(',');
    out.emplace_back(trim(v.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

std::uint64_t parse_u64(std::string_view v, int line) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("line " + std::to_string(line) + ": expected a number, got '" +
                      std::string(v) + "'");
  return out;
}

}  // namespace

ExperimentPlan parse_experiment_config(std::string_view text, const std::string& base_dir) {
  ExperimentPlan plan;
  BenchmarkSpec* bench = nullptr;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line != "[benchmark]")
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section " +
                          std::string(line));
      plan.benchmarks.emplace_back();
      bench = &plan.benchmarks.back();
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key{trim(line.substr(0, eq))};
    const std::string_view value = trim(line.substr(eq + 1));

    if (bench == nullptr) {
      if (key == "runs")
        plan.runs = parse_u64(value, line_no);
      else if (key == "budget")
        plan.budget = parse_u64(value, line_no);
      else if (key == "base_seed")
        plan.base_seed = parse_u64(value, line_no);
      else if (key == "jobs")
        plan.jobs = parse_u64(value, line_no);
      else if (key == "step_budget")
        plan.step_budget = parse_u64(value, line_no);
      else if (key == "prefix_cap")
        plan.prefix_cap = parse_u64(value, line_no);
      else if (key == "out_dir")
        plan.out_dir = (std::filesystem::path(base_dir) / std::string(value)).string();
      else if (key == "log_dir")
        plan.log_dir = (std::filesystem::path(base_dir) / std::string(value)).string();
      else if (key == "configs") {
        plan.configs.clear();
        for (const std::string& name : split_list(value)) {
          auto mode = fuzz::mode_from_name(name);
          if (!mode)
            throw ConfigError("line " + std::to_string(line_no) + ": unknown config '" + name +
                              "'");
          plan.configs.push_back(*mode);
        }
      } else {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
    } else {
      if (key == "name")
        bench->name = std::string(value);
      else if (key == "program")
        bench->program_path = (std::filesystem::path(base_dir) / std::string(value)).string();
      else if (key == "targets")
        bench->targets = split_list(value);
      else if (key == "seed_len")
        bench->seed_len = parse_u64(value, line_no);
      else if (key == "budget")
        bench->budget = parse_u64(value, line_no);
      else
        throw ConfigError("line " + std::to_string(line_no) + ": unknown benchmark key '" + key +
                          "'");
    }
  }

  if (plan.configs.empty())
    plan.configs = {fuzz::Mode::BaselineA, fuzz::Mode::LookaheadB};
  for (const BenchmarkSpec& b : plan.benchmarks) {
    if (b.name.empty()) throw ConfigError("benchmark without a name");
    if (b.program_path.empty()) throw ConfigError("benchmark '" + b.name + "' without a program");
    if (b.targets.empty()) throw ConfigError("benchmark '" + b.name + "' without targets");
  }
  return plan;
}

}  // namespace lafuzz::stats
