// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/lookahead.hpp"

#include "lafuzz/hash.hpp"

namespace lafuzz::lookahead {

bool is_split_point(std::size_t i, const ExecTrace& trace, const Program& program,
                    std::unordered_set<Loc>& seen_blocks, std::size_t prefix_cap) {
  const Loc loc = trace.locations[i];
  if (!program.is_leader(loc)) return false;
  const bool first_visit = seen_blocks.insert(loc).second;
  return first_visit && i < prefix_cap;
}

Lid lid_of_locations(std::span<const Loc> locations) {
  std::vector<std::uint8_t> buf;
  buf.reserve(locations.size() * 8);
  for (Loc l : locations) {
    const std::uint64_t v = l;
    for (int i = 7; i >= 0; --i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  return Lid{sha256_trunc64(buf.data(), buf.size())};
}

Lid lid_of_full_path(const ExecTrace& trace) {
  return lid_of_locations(trace.locations);
}

namespace {

std::vector<Loc> collect_split_points(const ExecTrace& trace, const Program& program,
                                      std::size_t prefix_cap) {
  std::vector<Loc> sps;
  std::unordered_set<Loc> seen;
  const std::size_t n = std::min(trace.locations.size(), prefix_cap);
  for (std::size_t i = 0; i < n; ++i) {
    const Loc loc = trace.locations[i];
    if (program.is_leader(loc) && seen.insert(loc).second) sps.push_back(loc);
  }
  return sps;
}

LookaheadResult full_path_result(const ExecTrace& trace, const Program& program,
                                 std::size_t prefix_cap) {
  LookaheadResult r;
  r.lid = lid_of_full_path(trace);
  r.split_points = collect_split_points(trace, program, prefix_cap);
  r.prefix_len = trace.locations.size();
  r.proved_at_split = false;
  return r;
}

}  // namespace

LookaheadResult analyze_trace(const Program& program, const ExecTrace& trace,
                              const TargetSet& targets, const AnalyzeOptions& opts,
                              AnalyzeStats* stats) {
  const std::vector<Loc>& path = trace.locations;
  if (path.empty()) return {lid_of_full_path(trace), {}, 0, false};

  // An imprecise run never proves anything: the identifier captures the
  // whole path, split points are still collected for the power schedule.
  if (opts.assume_targets_reachable) return full_path_result(trace, program, opts.prefix_cap);

  // A path that already visited a target is a finding, not a candidate for
  // steering; treat it like an unproved full path.
  for (Loc l : path) {
    if (targets.contains(l)) return full_path_result(trace, program, opts.prefix_cap);
  }

  // A genuinely halted path has no continuations, so the full path itself is
  // provably target-free ahead; a budget-truncated one is not.
  const bool halted = trace.status != vm::RunStatus::OutOfSteps;

  std::vector<Loc> sps;
  std::unordered_set<Loc> seen;
  absint::PrefixWalker walker(program);

  const std::size_t len = path.size();
  for (std::size_t i = 0; i < len; ++i) {
    if (i >= opts.prefix_cap) break;  // no further split points are possible

    const bool split_here = is_split_point(i, trace, program, seen, opts.prefix_cap);
    if (split_here) sps.push_back(path[i]);

    const bool has_next = i + 1 < len;
    if (has_next) {
      // After this step the walker holds exactly the prefix-inference
      // postcondition of path[0..i+1).
      if (!walker.step(path[i], path[i + 1]))
        return full_path_result(trace, program, opts.prefix_cap);
    }

    if (!split_here) continue;

    if (has_next) {
      auto res = absint::targets_unreachable(program, path[i + 1], walker.state(), targets,
                                             opts.suffix_limits);
      if (stats) {
        ++stats->suffix_checks;
        stats->suffix_iterations += res.iterations;
      }
      if (res.unreachable) {
        return {lid_of_locations(std::span<const Loc>(path).first(i + 1)), std::move(sps), i + 1,
                true};
      }
    } else if (halted) {
      return {lid_of_full_path(trace), std::move(sps), len, true};
    }
  }

  LookaheadResult r;
  r.lid = lid_of_full_path(trace);
  r.split_points = std::move(sps);
  r.prefix_len = len;
  r.proved_at_split = false;
  return r;
}

LookaheadResult analyze(const Program& program, std::span<const std::uint8_t> input,
                        const TargetSet& targets, const AnalyzeOptions& opts,
                        AnalyzeStats* stats) {
  const ExecTrace trace = vm::execute(program, input, opts.step_budget);
  return analyze_trace(program, trace, targets, opts, stats);
}

}  // namespace lafuzz::lookahead
