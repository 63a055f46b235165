// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/fuzzer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <ostream>
#include <unordered_set>

namespace lafuzz::fuzz {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::BaselineA: return "A";
    case Mode::LookaheadB: return "B";
    case Mode::ImpreciseC: return "C";
    case Mode::LidExponentialD: return "D";
  }
  return "?";
}

std::optional<Mode> mode_from_name(std::string_view name) {
  if (name == "A" || name == "a") return Mode::BaselineA;
  if (name == "B" || name == "b") return Mode::LookaheadB;
  if (name == "C" || name == "c") return Mode::ImpreciseC;
  if (name == "D" || name == "d") return Mode::LidExponentialD;
  return std::nullopt;
}

std::uint64_t rarity_cutoff_of_min(std::uint64_t min_count) {
  return std::bit_ceil(std::max<std::uint64_t>(1, min_count));
}

std::uint64_t rarity_cutoff(std::span<const std::uint64_t> counts) {
  return rarity_cutoff_of_min(*std::min_element(counts.begin(), counts.end()));
}

bool is_rare_lid(Lid lid, const RarityStats& stats) {
  const std::uint64_t cutoff = rarity_cutoff_of_min(stats.fuzz_by_lid.min());
  return stats.fuzz_by_lid.count(lid.hash) < cutoff;
}

bool is_rare_split_point(Loc p, const RarityStats& stats) {
  const std::uint64_t cutoff = rarity_cutoff_of_min(stats.fuzz_by_sp.min());
  return stats.fuzz_by_sp.count(p) < cutoff;
}

namespace {

std::uint64_t exp_energy(std::uint64_t selected, std::uint64_t cap) {
  const int cap_bits = std::bit_width(cap) - 1;  // cap is a power of two
  if (selected >= static_cast<std::uint64_t>(cap_bits)) return cap;
  return std::uint64_t{1} << selected;
}

}  // namespace

std::uint64_t lookahead_assign_energy(const CorpusEntry& entry, const RarityStats& stats,
                                      const ScheduleConfig& cfg) {
  bool rare = entry.lid && is_rare_lid(*entry.lid, stats);
  if (!rare) {
    for (Loc p : entry.split_points) {
      if (is_rare_split_point(p, stats)) {
        rare = true;
        break;
      }
    }
  }
  return rare ? exp_energy(entry.selected, cfg.energy_cap) : 1;
}

std::uint64_t baseline_assign_energy(const CorpusEntry& entry, const ScheduleConfig& cfg) {
  return exp_energy(entry.selected, cfg.energy_cap);
}

std::uint64_t lid_exponential_energy(const CorpusEntry& entry, const RarityStats& stats,
                                     const ScheduleConfig& cfg) {
  const std::uint64_t base = exp_energy(entry.selected, cfg.energy_cap);
  const std::uint64_t exercised = entry.lid ? stats.fuzz_by_lid.count(entry.lid->hash) : 0;
  return std::max<std::uint64_t>(1, base / (1 + exercised));
}

PickResult pick_input(std::vector<CorpusEntry>& corpus, Rng& rng) {
  const std::size_t idx = static_cast<std::size_t>(rand_below(rng, corpus.size()));
  const std::uint64_t before = corpus[idx].selected;
  corpus[idx].selected += 1;
  return {idx, before};
}

namespace {

constexpr std::uint64_t kInterestingWords[] = {0, 1, 2, 42, 256, 257, 5687,
                                               0xFFFFFFFFFFFFFFFFull};

void write_word_be(std::vector<std::uint8_t>& bytes, std::size_t off, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes[off + i] = static_cast<std::uint8_t>(v >> (8 * (7 - i)));
}

std::uint64_t read_word_be(const std::vector<std::uint8_t>& bytes, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | bytes[off + i];
  return v;
}

}  // namespace

std::vector<std::uint8_t> fuzz_input(std::span<const std::uint8_t> input, Rng& rng,
                                     std::size_t max_len) {
  std::vector<std::uint8_t> out(input.begin(), input.end());
  const int n_mutations = 1 + static_cast<int>(rand_below(rng, 4));
  for (int m = 0; m < n_mutations; ++m) {
    int kind = static_cast<int>(rand_below(rng, 5));
    if (out.empty() && kind != 4) kind = 4;
    if (kind == 3 && out.size() < 8) kind = 4;
    switch (kind) {
      case 0: {  // bit flip
        const std::size_t pos = rand_below(rng, out.size());
        out[pos] ^= static_cast<std::uint8_t>(1u << rand_below(rng, 8));
        break;
      }
      case 1: {  // byte set to a random different value
        const std::size_t pos = rand_below(rng, out.size());
        out[pos] ^= static_cast<std::uint8_t>(1 + rand_below(rng, 255));
        break;
      }
      case 2: {  // byte add/sub small delta
        const std::size_t pos = rand_below(rng, out.size());
        const std::uint8_t delta = static_cast<std::uint8_t>(1 + rand_below(rng, 16));
        out[pos] = rand_below(rng, 2) ? static_cast<std::uint8_t>(out[pos] + delta)
                                      : static_cast<std::uint8_t>(out[pos] - delta);
        break;
      }
      case 3: {  // word overwrite with an interesting constant
        const std::size_t off = rand_below(rng, out.size() - 7);
        std::size_t pick = rand_below(rng, 8);
        if (read_word_be(out, off) == kInterestingWords[pick])
          pick = (pick + 1 + rand_below(rng, 7)) % 8;
        write_word_be(out, off, kInterestingWords[pick]);
        break;
      }
      case 4: {  // truncate or extend by up to 8 bytes
        bool grow = rand_below(rng, 2) != 0;
        if (out.empty()) grow = true;
        if (out.size() >= max_len) grow = false;
        std::size_t k = 1 + rand_below(rng, 8);
        if (grow) {
          k = std::min(k, max_len - out.size());
          for (std::size_t i = 0; i < k; ++i)
            out.push_back(static_cast<std::uint8_t>(rand_below(rng, 256)));
        } else {
          k = std::min(k, out.size());
          out.resize(out.size() - k);
        }
        break;
      }
    }
  }
  return out;
}

namespace {

void append_hex16(std::string& s, std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  s += buf;
}

struct EventLogger {
  std::ostream* out;
  std::string line;

  void emit(std::uint64_t exec_index, const std::optional<PathId>& parent,
            std::uint64_t energy, const std::optional<PathId>& new_pid,
            const std::optional<Lid>& lid, bool target_hit) {
    if (!out) return;
    line.clear();
    line += "{\"exec\":";
    line += std::to_string(exec_index);
    line += ",\"parent\":";
    if (parent) {
      line += '"';
      append_hex16(line, *parent);
      line += '"';
    } else {
      line += "null";
    }
    line += ",\"energy\":";
    line += std::to_string(energy);
    if (new_pid) {
      line += ",\"new_pid\":\"";
      append_hex16(line, *new_pid);
      line += '"';
    }
    if (lid) {
      line += ",\"lid\":\"";
      append_hex16(line, lid->hash);
      line += '"';
    }
    if (target_hit) line += ",\"target_hit\":true";
    line += "}\n";
    *out << line;
  }
};

}  // namespace

FuzzRunResult fuzz_loop(const Program& program, std::span<const std::vector<std::uint8_t>> seeds,
                        const TargetSet& targets, const ScheduleConfig& cfg,
                        const FuzzOptions& opts) {
  const auto t_start = std::chrono::steady_clock::now();

  FuzzRunResult result;
  Rng rng(opts.rng_seed);
  std::vector<CorpusEntry> corpus;
  std::unordered_set<PathId> known_pids;
  RarityStats stats;
  EventLogger logger{opts.log, {}};

  const bool lookahead_enabled = cfg.mode != Mode::BaselineA;
  lookahead::AnalyzeOptions la_opts;
  la_opts.prefix_cap = opts.prefix_cap;
  la_opts.step_budget = opts.step_budget;
  la_opts.assume_targets_reachable = cfg.mode == Mode::ImpreciseC;

  vm::ExecTrace trace;
  std::vector<std::uint8_t> covered(program.size(), 0);
  std::uint64_t exec_index = 0;
  bool target_reached = false;

  // Runs one input, admits a new path, logs the event; the caller owns
  // budget accounting.
  auto run_one = [&](const std::vector<std::uint8_t>& input,
                     const std::optional<PathId>& parent, std::uint64_t energy) {
    vm::execute_into(program, input, opts.step_budget, trace);

    bool hit = false;
    for (Loc l : trace.locations) {
      covered[l] = 1;
      if (targets.contains(l)) hit = true;
    }
    if (hit && !result.executions_to_target) result.executions_to_target = exec_index;
    if (hit) target_reached = true;

    const PathId pid = vm::path_id(trace);
    std::optional<PathId> new_pid;
    std::optional<Lid> lid;
    if (known_pids.insert(pid).second) {
      new_pid = pid;
      CorpusEntry entry;
      entry.input = input;
      entry.pid = pid;
      entry.status = trace.status;
      if (lookahead_enabled) {
        const auto la_t0 = std::chrono::steady_clock::now();
        lookahead::LookaheadResult la = lookahead::analyze_trace(program, trace, targets, la_opts);
        result.lookahead_time_s +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - la_t0).count();
        result.lookahead_calls += 1;
        entry.lid = la.lid;
        entry.split_points = la.split_points;
        lid = la.lid;
        stats.fuzz_by_lid.track(la.lid.hash);
        for (Loc p : entry.split_points) stats.fuzz_by_sp.track(p);
      }
      corpus.push_back(std::move(entry));
      result.admissions += 1;
    }
    logger.emit(exec_index, parent, energy, new_pid, lid, hit);
    ++exec_index;
  };

  for (const auto& seed : seeds) {
    if (exec_index >= opts.budget_executions) break;
    if (opts.stop_on_target && target_reached) break;
    run_one(seed, std::nullopt, 0);
  }

  while (exec_index < opts.budget_executions && !(opts.stop_on_target && target_reached) &&
         !corpus.empty()) {
    const std::size_t idx = static_cast<std::size_t>(rand_below(rng, corpus.size()));

    // Energy is computed from the pre-increment selection count.
    std::uint64_t energy = 1;
    switch (cfg.mode) {
      case Mode::BaselineA:
        energy = baseline_assign_energy(corpus[idx], cfg);
        break;
      case Mode::LookaheadB:
      case Mode::ImpreciseC:
        energy = lookahead_assign_energy(corpus[idx], stats, cfg);
        break;
      case Mode::LidExponentialD:
        energy = lid_exponential_energy(corpus[idx], stats, cfg);
        break;
    }
    corpus[idx].selected += 1;

    // The corpus vector may grow during the energy loop; keep a stable copy
    // of the parent's attribution data.
    const std::vector<std::uint8_t> parent_input = corpus[idx].input;
    const std::optional<Lid> parent_lid = corpus[idx].lid;
    const std::vector<Loc> parent_sps = corpus[idx].split_points;
    const PathId parent_pid = corpus[idx].pid;

    for (std::uint64_t e = 0; e < energy; ++e) {
      if (exec_index >= opts.budget_executions) break;
      if (opts.stop_on_target && target_reached) break;
      const std::vector<std::uint8_t> mutant = fuzz_input(parent_input, rng, opts.max_input_len);
      run_one(mutant, parent_pid, energy);
      if (lookahead_enabled) {
        if (parent_lid) stats.fuzz_by_lid.increment(parent_lid->hash);
        for (Loc p : parent_sps) stats.fuzz_by_sp.increment(p);
      }
    }
  }

  result.total_executions = exec_index;
  result.corpus_size = corpus.size();
  for (std::uint8_t c : covered) result.covered_locations += c;
  result.corpus = std::move(corpus);
  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace lafuzz::fuzz
