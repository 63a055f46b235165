// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: assemble programs, run inputs, analyze paths,
// fuzz, and run the benchmark matrix.

#include <CLI11.hpp>
#include <json.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "lafuzz/assembler.hpp"
#include "lafuzz/experiment.hpp"
#include "lafuzz/fuzzer.hpp"
#include "lafuzz/lookahead.hpp"
#include "lafuzz/vm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace lafuzz;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

struct LoadedProgram {
  vm::Program program;
  std::map<std::string, vm::Loc> symbols;
};

LoadedProgram load_program(const std::string& path) {
  LoadedProgram lp;
  const std::string data = read_file(path);
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".bin") {
    lp.program = vm::decode_program(
        std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
    // Pick up a symbol table next to the binary when present.
    fs::path sym = fs::path(path);
    sym.replace_extension(".sym");
    if (fs::exists(sym)) {
      const json j = json::parse(read_file(sym.string()));
      for (auto it = j.begin(); it != j.end(); ++it)
        lp.symbols[it.key()] = it.value().get<vm::Loc>();
    }
  } else {
    vm::AsmResult res = vm::assemble(data);
    lp.program = std::move(res.program);
    lp.symbols = std::move(res.symbols);
  }
  return lp;
}

std::vector<std::uint8_t> parse_hex_input(const std::string& text) {
  std::vector<std::uint8_t> bytes;
  int hi = -1;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    int v;
    if (c >= '0' && c <= '9')
      v = c - '0';
    else if (c >= 'a' && c <= 'f')
      v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F')
      v = c - 'A' + 10;
    else
      throw std::runtime_error(std::string("bad hex character '") + c + "'");
    if (hi < 0) {
      hi = v;
    } else {
      bytes.push_back(static_cast<std::uint8_t>(hi << 4 | v));
      hi = -1;
    }
  }
  if (hi >= 0) throw std::runtime_error("odd number of hex digits");
  return bytes;
}

std::vector<vm::Loc> parse_targets(const std::string& spec, const LoadedProgram& lp) {
  std::vector<vm::Loc> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto it = lp.symbols.find(item);
    if (it != lp.symbols.end()) {
      out.push_back(it->second);
      continue;
    }
    try {
      out.push_back(static_cast<vm::Loc>(std::stoul(item)));
    } catch (...) {
      throw std::runtime_error("unknown target '" + item + "'");
    }
  }
  return out;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::size_t env_prefix_cap() {
  if (const char* v = std::getenv("LOOKAHEAD_PREFIX_CAP")) {
    char* end = nullptr;
    const unsigned long long cap = std::strtoull(v, &end, 10);
    if (end && *end == '\0') return static_cast<std::size_t>(cap);
    std::cerr << "warning: ignoring malformed LOOKAHEAD_PREFIX_CAP\n";
  }
  return lookahead::kDefaultPrefixCap;
}

json state_to_json(const absint::AbsState& s) {
  auto value_to_json = [](const absint::AbsValue& v) -> json {
    switch (v.kind()) {
      case absint::AbsValue::Kind::Bottom: return "bottom";
      case absint::AbsValue::Kind::Top: return "top";
      case absint::AbsValue::Kind::Const: return v.value();
    }
    return nullptr;
  };
  json j;
  j["reachable"] = s.reachable;
  if (s.stack_unknown) {
    j["stack"] = "unknown-depth";
  } else {
    json stack = json::array();
    for (const auto& slot : s.stack) stack.push_back(value_to_json(slot.value));
    j["stack"] = std::move(stack);
  }
  auto map_to_json = [&](const absint::AbsMap& m) {
    json mj;
    mj["havocked"] = m.havocked;
    json entries = json::object();
    for (const auto& [k, v] : m.entries) entries[std::to_string(k)] = value_to_json(v);
    mj["entries"] = std::move(entries);
    return mj;
  };
  j["memory"] = map_to_json(s.memory);
  j["storage"] = map_to_json(s.storage);
  return j;
}

int cmd_assemble(const std::string& in_path, const std::string& out_path) {
  vm::AsmResult res = vm::assemble(read_file(in_path));
  const std::vector<std::uint8_t> bin = vm::encode_program(res.program);
  write_file(out_path, std::string_view(reinterpret_cast<const char*>(bin.data()), bin.size()));

  json symbols = json::object();
  for (const auto& [name, loc] : res.symbols) symbols[name] = loc;
  fs::path sym = fs::path(out_path);
  sym.replace_extension(".sym");
  write_file(sym.string(), symbols.dump(2) + "\n");

  std::cout << "assembled " << res.program.size() << " instructions -> " << out_path << " + "
            << sym.string() << "\n";
  return 0;
}

int cmd_run(const std::string& prog_path, const std::string& input_path, bool with_trace,
            std::uint64_t step_budget) {
  const LoadedProgram lp = load_program(prog_path);
  const std::vector<std::uint8_t> input = parse_hex_input(read_file(input_path));
  if (input.size() > vm::kMaxInputLen)
    throw std::runtime_error("input exceeds max length " + std::to_string(vm::kMaxInputLen));

  const vm::ExecTrace trace = vm::execute(lp.program, input, step_budget);
  json j;
  j["status"] = vm::status_name(trace.status);
  j["steps"] = trace.steps_used;
  j["path_id"] = hex16(vm::path_id(trace));
  if (with_trace) {
    j["locations"] = trace.locations;
    json edges = json::array();
    for (const auto& [from, to] : trace.branch_edges) edges.push_back({from, to});
    j["branch_edges"] = std::move(edges);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze(const std::string& prog_path, const std::string& input_path,
                const std::string& targets_spec, std::size_t prefix_cap,
                std::uint64_t step_budget, bool imprecise, bool dump_states) {
  const LoadedProgram lp = load_program(prog_path);
  const std::vector<std::uint8_t> input = parse_hex_input(read_file(input_path));
  const std::vector<vm::Loc> target_locs = parse_targets(targets_spec, lp);
  const absint::TargetSet targets = absint::TargetSet::build(lp.program, target_locs);

  lookahead::AnalyzeOptions opts;
  opts.prefix_cap = prefix_cap;
  opts.step_budget = step_budget;
  opts.assume_targets_reachable = imprecise;

  const lookahead::LookaheadResult res = lookahead::analyze(lp.program, input, targets, opts);

  json j;
  j["lid"] = hex16(res.lid.hash);
  j["split_points"] = res.split_points;
  j["prefix_len"] = res.prefix_len;
  j["proved_at_split"] = res.proved_at_split;

  if (dump_states) {
    // Joined per-location states of a whole-program pass from the entry,
    // i.e. what an offline run of the same analysis would see.
    const auto check = absint::targets_unreachable(lp.program, lp.program.entry(),
                                                   absint::AbsState::initial(), targets);
    json states = json::object();
    for (const auto& [loc, state] : check.visited) states[std::to_string(loc)] = state_to_json(state);
    j["offline_unreachable"] = check.unreachable;
    j["offline_states"] = std::move(states);
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_fuzz(const std::string& prog_path, const std::string& config_name,
             const std::string& targets_spec, std::uint64_t budget, std::uint64_t rng_seed,
             const std::string& seed_file, const std::string& log_path,
             std::uint64_t step_budget, std::size_t prefix_cap, std::size_t max_input_len,
             bool run_to_budget) {
  const LoadedProgram lp = load_program(prog_path);
  const auto mode = fuzz::mode_from_name(config_name);
  if (!mode) throw std::runtime_error("unknown config '" + config_name + "' (use A, B, C or D)");

  const std::vector<vm::Loc> target_locs = parse_targets(targets_spec, lp);
  const absint::TargetSet targets = absint::TargetSet::build(lp.program, target_locs);

  std::vector<std::vector<std::uint8_t>> seeds;
  if (!seed_file.empty())
    seeds.push_back(parse_hex_input(read_file(seed_file)));
  else
    seeds.emplace_back(64, 0);  // all-zeros default seed

  fuzz::ScheduleConfig cfg;
  cfg.mode = *mode;

  fuzz::FuzzOptions opts;
  opts.budget_executions = budget;
  opts.rng_seed = rng_seed;
  opts.step_budget = step_budget;
  opts.prefix_cap = prefix_cap;
  opts.max_input_len = max_input_len;
  opts.stop_on_target = !run_to_budget;

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + log_path);
    opts.log = &log;
  }

  const fuzz::FuzzRunResult res = fuzz::fuzz_loop(lp.program, seeds, targets, cfg, opts);

  json j;
  if (res.executions_to_target)
    j["executions_to_target"] = *res.executions_to_target;
  else
    j["executions_to_target"] = nullptr;
  j["total_executions"] = res.total_executions;
  j["corpus_size"] = res.corpus_size;
  j["lookahead_calls"] = res.lookahead_calls;
  j["admissions"] = res.admissions;
  j["covered_locations"] = res.covered_locations;
  j["wall_time_s"] = res.wall_time_s;
  j["lookahead_time_s"] = res.lookahead_time_s;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bench(const std::string& config_path, std::size_t jobs, const std::string& out_dir,
              const std::string& log_dir) {
  const fs::path base = fs::absolute(fs::path(config_path)).parent_path();
  stats::ExperimentPlan plan = stats::parse_experiment_config(read_file(config_path),
                                                              base.string());
  if (jobs) plan.jobs = jobs;
  if (!out_dir.empty()) plan.out_dir = out_dir;
  if (!log_dir.empty()) plan.log_dir = log_dir;

  const stats::ExperimentResult result = stats::run_experiment(plan);

  fs::create_directories(plan.out_dir);
  const fs::path csv = fs::path(plan.out_dir) / "report.csv";
  const fs::path md = fs::path(plan.out_dir) / "report.md";
  write_file(csv.string(), result.report_csv);
  write_file(md.string(), result.report_markdown);

  std::cout << result.report_markdown;
  std::cerr << "wall " << result.total_wall_s << "s across runs, lookahead "
            << result.total_lookahead_s << "s over " << result.total_lookahead_calls
            << " calls\n";
  std::cout << "reports: " << csv.string() << " " << md.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"minimal stack-machine fuzzer with online lookahead analysis"};
  app.require_subcommand(1);

  const std::size_t default_cap = env_prefix_cap();

  // assemble
  std::string asm_in, asm_out;
  auto* assemble = app.add_subcommand("assemble", "assemble source into a program binary");
  assemble->add_option("input", asm_in, "assembly source")->required();
  assemble->add_option("output", asm_out, "program binary output")->required();

  // run
  std::string run_prog, run_input;
  bool run_trace = false;
  std::uint64_t run_steps = vm::kDefaultStepBudget;
  auto* run = app.add_subcommand("run", "execute one input and print the result");
  run->add_option("program", run_prog, "program (.asm or .bin)")->required();
  run->add_option("input", run_input, "hex-encoded input file")->required();
  run->add_flag("--trace", run_trace, "include the full location trace");
  run->add_option("--step-budget", run_steps, "execution step budget");

  // analyze
  std::string an_prog, an_input, an_targets;
  std::size_t an_cap = default_cap;
  std::uint64_t an_steps = vm::kDefaultStepBudget;
  bool an_imprecise = false, an_dump = false;
  auto* analyze = app.add_subcommand("analyze", "lookahead-analyze one input's path");
  analyze->add_option("program", an_prog)->required();
  analyze->add_option("input", an_input, "hex-encoded input file")->required();
  analyze->add_option("--targets", an_targets, "target locations or labels, comma separated")
      ->required();
  analyze->add_option("--prefix-cap", an_cap, "split-point cap along the trace");
  analyze->add_option("--step-budget", an_steps);
  analyze->add_flag("--imprecise", an_imprecise, "degrade suffix checks to constant false");
  analyze->add_flag("--dump-states", an_dump, "include per-location joined states");

  // fuzz
  std::string fz_prog, fz_config = "B", fz_targets, fz_seed_file, fz_log;
  std::uint64_t fz_budget = 1'000'000, fz_seed = 0, fz_steps = vm::kDefaultStepBudget;
  std::size_t fz_cap = default_cap, fz_maxlen = vm::kMaxInputLen;
  bool fz_run_to_budget = false;
  auto* fuzz_cmd = app.add_subcommand("fuzz", "run the greybox fuzzing loop");
  fuzz_cmd->add_option("program", fz_prog)->required();
  fuzz_cmd->add_option("--config", fz_config, "schedule: A, B, C or D");
  fuzz_cmd->add_option("--targets", fz_targets, "target locations or labels")->required();
  fuzz_cmd->add_option("--budget", fz_budget, "execution budget");
  fuzz_cmd->add_option("--rng-seed", fz_seed, "random seed");
  fuzz_cmd->add_option("--seed-file", fz_seed_file, "hex-encoded seed input");
  fuzz_cmd->add_option("--log", fz_log, "JSON-lines run log path");
  fuzz_cmd->add_option("--step-budget", fz_steps);
  fuzz_cmd->add_option("--prefix-cap", fz_cap);
  fuzz_cmd->add_option("--max-input-len", fz_maxlen);
  fuzz_cmd->add_flag("--run-to-budget", fz_run_to_budget,
                     "keep fuzzing after the first target hit");

  // bench
  std::string bn_config, bn_out, bn_logs;
  std::size_t bn_jobs = 0;
  auto* bench = app.add_subcommand("bench", "run the benchmark matrix from a config file");
  bench->add_option("config", bn_config, "experiment config file")->required();
  bench->add_option("--jobs", bn_jobs, "worker threads (default: hardware)");
  bench->add_option("--out-dir", bn_out, "report output directory");
  bench->add_option("--log-dir", bn_logs, "per-run log directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*assemble) return cmd_assemble(asm_in, asm_out);
    if (*run) return cmd_run(run_prog, run_input, run_trace, run_steps);
    if (*analyze)
      return cmd_analyze(an_prog, an_input, an_targets, an_cap, an_steps, an_imprecise, an_dump);
    if (*fuzz_cmd)
      return cmd_fuzz(fz_prog, fz_config, fz_targets, fz_budget, fz_seed, fz_seed_file, fz_log,
                      fz_steps, fz_cap, fz_maxlen, fz_run_to_budget);
    if (*bench) return cmd_bench(bn_config, bn_jobs, bn_out, bn_logs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
