// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "lafuzz/lookahead.hpp"
#include "lafuzz/vm.hpp"

namespace lafuzz::fuzz {

using lookahead::Lid;
using lookahead::TargetSet;
using vm::Loc;
using vm::PathId;
using vm::Program;

using Rng = std::mt19937_64;

/// Uniform draw from [0, n); n must be nonzero.
inline std::uint64_t rand_below(Rng& rng, std::uint64_t n) { return rng() % n; }

enum class Mode : std::uint8_t {
  BaselineA = 0,       // cut-off exponential, no analysis
  LookaheadB = 1,      // lookahead analysis + rarity schedule
  ImpreciseC = 2,      // suffix check degraded to constant "reachable"
  LidExponentialD = 3  // lookahead identifiers with an exponential schedule
};

const char* mode_name(Mode m);
std::optional<Mode> mode_from_name(std::string_view name);

struct ScheduleConfig {
  std::uint64_t energy_cap = 1024;  // K; a power of two
  Mode mode = Mode::LookaheadB;
};

struct CorpusEntry {
  std::vector<std::uint8_t> input;
  PathId pid = 0;
  std::optional<Lid> lid;          // present iff lookahead enabled
  std::vector<Loc> split_points;   // along the no-target-ahead prefix
  std::uint64_t selected = 0;      // times picked for fuzzing
  vm::RunStatus status = vm::RunStatus::Stopped;
};

/// Monotone counter table with O(1) minimum, for the rarity cutoff.
class CountTable {
 public:
  void track(std::uint64_t key) {
    if (counts_.emplace(key, 0).second) values_.insert(0);
  }
  void increment(std::uint64_t key) {
    auto it = counts_.find(key);
    if (it == counts_.end()) return;
    values_.erase(values_.find(it->second));
    values_.insert(++it->second);
  }
  bool tracked(std::uint64_t key) const { return counts_.count(key) != 0; }
  std::uint64_t count(std::uint64_t key) const {
    auto it = counts_.find(key);
    return it == counts_.end() ? 0 : it->second;
  }
  bool empty() const { return counts_.empty(); }
  std::uint64_t min() const { return values_.empty() ? 0 : *values_.begin(); }

 private:
  std::unordered_map<std::uint64_t, std::uint64_t> counts_;
  std::multiset<std::uint64_t> values_;
};

/// fuzz(lambda) and fuzz(p): how many mutants were generated from corpus
/// entries carrying that identifier / split point.
struct RarityStats {
  CountTable fuzz_by_lid;
  CountTable fuzz_by_sp;
};

/// Smallest power of two 2^i with 2^(i-1) < max(1, min(counts)) <= 2^i.
std::uint64_t rarity_cutoff(std::span<const std::uint64_t> counts);
std::uint64_t rarity_cutoff_of_min(std::uint64_t min_count);

bool is_rare_lid(Lid lid, const RarityStats& stats);
bool is_rare_split_point(Loc p, const RarityStats& stats);

/// min(2^selected, K) when the entry's identifier or any of its split points
/// is rare; 1 otherwise. `entry.selected` is read before the increment of
/// the selection being charged.
std::uint64_t lookahead_assign_energy(const CorpusEntry& entry, const RarityStats& stats,
                                      const ScheduleConfig& cfg);

/// Cut-off exponential baseline: min(2^selected, K), ungated.
std::uint64_t baseline_assign_energy(const CorpusEntry& entry, const ScheduleConfig& cfg);

/// Exponential schedule damped by how often the identifier was exercised:
/// max(1, min(2^selected, K) / (1 + fuzz(lid))).
std::uint64_t lid_exponential_energy(const CorpusEntry& entry, const RarityStats& stats,
                                     const ScheduleConfig& cfg);

/// Uniform random choice; increments the entry's selection counter and
/// returns its index plus the pre-increment count.
struct PickResult {
  std::size_t index;
  std::uint64_t selected_before;
};
PickResult pick_input(std::vector<CorpusEntry>& corpus, Rng& rng);

/// Applies 1..4 stacked mutations: bit flip, byte randomization, byte
/// add/sub, interesting-word overwrite, truncate/extend. The result respects
/// `max_len`; each individual mutation changes the input.
std::vector<std::uint8_t> fuzz_input(std::span<const std::uint8_t> input, Rng& rng,
                                     std::size_t max_len = vm::kMaxInputLen);

struct FuzzOptions {
  std::uint64_t budget_executions = 1'000'000;
  std::uint64_t rng_seed = 0;
  std::uint64_t step_budget = vm::kDefaultStepBudget;
  std::size_t max_input_len = vm::kMaxInputLen;
  std::size_t prefix_cap = lookahead::kDefaultPrefixCap;
  bool stop_on_target = true;
  std::ostream* log = nullptr;  // JSON-lines event stream, wall-time free
};

struct FuzzRunResult {
  std::optional<std::uint64_t> executions_to_target;
  double wall_time_s = 0.0;
  std::size_t corpus_size = 0;
  double lookahead_time_s = 0.0;
  std::uint64_t lookahead_calls = 0;
  std::uint64_t total_executions = 0;
  std::uint64_t admissions = 0;
  std::uint64_t covered_locations = 0;   // distinct locations ever executed
  std::vector<CorpusEntry> corpus;       // the generated test suite
};

/// The greybox loop: admit seeds, then pick/energize/mutate/run until the
/// budget is spent (or a target is reached, when stop_on_target is set).
/// Deterministic given (program, seeds, targets, cfg, opts).
FuzzRunResult fuzz_loop(const Program& program, std::span<const std::vector<std::uint8_t>> seeds,
                        const TargetSet& targets, const ScheduleConfig& cfg,
                        const FuzzOptions& opts);

}  // namespace lafuzz::fuzz
