// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "lafuzz/absint.hpp"
#include "lafuzz/vm.hpp"

namespace lafuzz::lookahead {

using vm::ExecTrace;
using vm::Loc;
using vm::Program;

/// Target locations, with a constant-time membership mask.
using TargetSet = absint::TargetSet;

/// Split points after this many trace positions are ignored; long prefixes
/// only make the analysis slower, never unsound.
constexpr std::size_t kDefaultPrefixCap = 8192;

/// Lookahead identifier: 64-bit truncated SHA-256 over the location sequence
/// of a no-target-ahead prefix. Equal prefixes hash equal; paths sharing a
/// prefix form one equivalence class.
struct Lid {
  std::uint64_t hash = 0;
  auto operator<=>(const Lid&) const = default;
};

struct LookaheadResult {
  Lid lid;
  std::vector<Loc> split_points;  // unique, in first-visit order
  std::size_t prefix_len = 0;
  bool proved_at_split = false;
};

struct AnalyzeOptions {
  std::size_t prefix_cap = kDefaultPrefixCap;
  std::uint64_t step_budget = vm::kDefaultStepBudget;
  /// Degrades suffix checking to a constant "reachable": identifiers then
  /// capture entire paths.
  bool assume_targets_reachable = false;
  absint::SuffixLimits suffix_limits{};
};

/// Per-call cost counters, accumulated across calls when reused.
struct AnalyzeStats {
  std::size_t suffix_checks = 0;
  std::size_t suffix_iterations = 0;
};

/// True iff trace position `i` starts a basic block not yet entered along
/// this trace and lies under the prefix cap. Inserts the leader into
/// `seen_blocks`.
bool is_split_point(std::size_t i, const ExecTrace& trace, const Program& program,
                    std::unordered_set<Loc>& seen_blocks,
                    std::size_t prefix_cap = kDefaultPrefixCap);

Lid lid_of_locations(std::span<const Loc> locations);
Lid lid_of_full_path(const ExecTrace& trace);

/// Walks the recorded path; at every split point runs prefix inference and
/// suffix checking, returning the hash of the shortest prefix whose suffixes
/// provably avoid all targets. Falls back to the full-path hash: every
/// complete path is trivially a no-target-ahead prefix.
LookaheadResult analyze_trace(const Program& program, const ExecTrace& trace,
                              const TargetSet& targets, const AnalyzeOptions& opts = {},
                              AnalyzeStats* stats = nullptr);

/// Runs the input, then analyzes the exercised path.
LookaheadResult analyze(const Program& program, std::span<const std::uint8_t> input,
                        const TargetSet& targets, const AnalyzeOptions& opts = {},
                        AnalyzeStats* stats = nullptr);

}  // namespace lafuzz::lookahead

template <>
struct std::hash<lafuzz::lookahead::Lid> {
  std::size_t operator()(const lafuzz::lookahead::Lid& l) const noexcept {
    return std::hash<std::uint64_t>{}(l.hash);
  }
};
