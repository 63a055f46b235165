// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <unordered_set>

#include "lafuzz/lookahead.hpp"
#include "support/fixtures.hpp"
#include "support/randprog.hpp"

using namespace lafuzz;
using namespace lafuzz::lookahead;
using vm::Loc;

namespace {

std::size_t trace_index(const vm::ExecTrace& t, Loc loc) {
  for (std::size_t i = 0; i < t.locations.size(); ++i)
    if (t.locations[i] == loc) return i;
  REQUIRE(false);
  return 0;
}

}  // namespace

TEST_CASE("is_split_point: entry yes, revisits no, beyond the cap no") {
  auto res = vm::assemble("loop: JUMPDEST\nINPUT\nPUSH @loop\nJUMPI\nSTOP\n");
  auto trace = vm::execute(res.program, testsup::words_be({1, 1, 0}));
  // Path: three headers of the same block, then the fall-through exit.
  std::unordered_set<Loc> seen;
  CHECK(is_split_point(0, trace, res.program, seen));        // entry, first visit
  CHECK_FALSE(is_split_point(4, trace, res.program, seen));  // same leader again
  std::unordered_set<Loc> seen2;
  CHECK_FALSE(is_split_point(0, trace, res.program, seen2, /*prefix_cap=*/0));
}

TEST_CASE("lid: equal location sequences hash equal, different ones differ") {
  auto bar = testsup::load_bar();
  auto in = testsup::bar_input(2, 2, 2, 2, 2);
  auto t1 = vm::execute(bar.program, in);
  auto t2 = vm::execute(bar.program, in);
  CHECK(lid_of_full_path(t1) == lid_of_full_path(t2));

  // Distinct sequences: no collisions over a pile of generated traces.
  testsup::Rng rng(5);
  std::set<std::uint64_t> hashes;
  std::set<std::vector<Loc>> seqs;
  for (int i = 0; i < 500; ++i) {
    auto p = testsup::random_program(rng);
    auto t = vm::execute(p, testsup::small_input(static_cast<unsigned>(rng() % 16),
                                                 static_cast<unsigned>(rng() % 16)),
                         256);
    if (seqs.insert(t.locations).second) hashes.insert(lid_of_full_path(t).hash);
  }
  CHECK(hashes.size() == seqs.size());
}

TEST_CASE("analyze: empty target set proves at the first split point") {
  auto res = vm::assemble("JUMPDEST\nPUSH 1\nPUSH 2\nADD\nPOP\nSTOP\n");
  auto r = analyze(res.program, {}, TargetSet::build(res.program, {}));
  CHECK(r.proved_at_split);
  CHECK(r.prefix_len == 1);
  CHECK(r.split_points == std::vector<Loc>{0});
}

TEST_CASE("analyze: a target on the entry block is never provably ahead-free") {
  auto res = vm::assemble("PUSH 1\nPUSH 2\nADD\nPOP\nSTOP\n");
  // Target on the final stop: every prefix has it ahead until executed, and
  // execution of the full path visits it.
  auto r = analyze(res.program, {}, TargetSet::build(res.program, std::array<Loc, 1>{4}));
  CHECK_FALSE(r.proved_at_split);
  auto trace = vm::execute(res.program, {});
  CHECK(r.prefix_len == trace.locations.size());
  CHECK(r.lid == lid_of_full_path(trace));
}

TEST_CASE("analyze: bar inner-if branches get distinct provable prefixes") {
  auto bar = testsup::load_bar();
  const TargetSet targets = TargetSet::build(
      bar.program, std::array{bar.symbols.at("t14"), bar.symbols.at("t19")});

  auto even = analyze(bar.program, testsup::bar_input(1, 2, 4, 5, 0), targets);
  auto odd = analyze(bar.program, testsup::bar_input(1, 2, 3, 5, 0), targets);
  CHECK(even.proved_at_split);
  CHECK(odd.proved_at_split);
  CHECK(even.lid != odd.lid);

  // The odd-y path proves at the inner join block; the even-y path proves one
  // block earlier, where the result cell is already a known constant.
  auto odd_trace = vm::execute(bar.program, testsup::bar_input(1, 2, 3, 5, 0));
  CHECK(odd.prefix_len == trace_index(odd_trace, bar.symbols.at("join9")) + 1);
}

TEST_CASE("analyze: every then-branch input shares one identifier for the rare target") {
  auto bar = testsup::load_bar();
  const TargetSet t22 = TargetSet::build(bar.program, std::array{bar.symbols.at("t22")});

  auto a = analyze(bar.program, testsup::bar_input(9, 2, 4, 100, 7), t22);
  auto b = analyze(bar.program, testsup::bar_input(200, 0, 3, 1, 1), t22);
  auto c = analyze(bar.program, testsup::bar_input(0, 4, 0, 255, 0), t22);
  CHECK(a.proved_at_split);
  CHECK(a.lid == b.lid);
  CHECK(a.lid == c.lid);
  CHECK(a.prefix_len == b.prefix_len);

  // An else-branch input proves only after the rare assert has passed.
  auto e = analyze(bar.program, testsup::bar_input(0, 1, 0, 0, 7), t22);
  CHECK(e.proved_at_split);
  CHECK(e.lid != a.lid);
  bool has_else_block = false;
  for (Loc p : e.split_points) has_else_block |= p == bar.symbols.at("else_br");
  CHECK(has_else_block);
}

TEST_CASE("analyze: prefix minimality against a re-run of the split loop") {
  auto bar = testsup::load_bar();
  const TargetSet targets = TargetSet::build(
      bar.program, std::array{bar.symbols.at("t14"), bar.symbols.at("t19")});
  auto input = testsup::bar_input(2, 2, 5, 9, 1);
  auto trace = vm::execute(bar.program, input);
  auto r = analyze(bar.program, input, targets);
  REQUIRE(r.proved_at_split);

  std::unordered_set<Loc> seen;
  for (std::size_t i = 0; i + 1 < r.prefix_len; ++i) {
    if (!is_split_point(i, trace, bar.program, seen)) continue;
    auto phi = absint::prefix_inference(bar.program, trace.locations, i + 1);
    REQUIRE(phi.next.has_value());
    CHECK_FALSE(absint::targets_unreachable(bar.program, *phi.next, phi.state, targets)
                    .unreachable);
  }
}

TEST_CASE("analyze: inputs that already reach a target are findings, not prefixes") {
  auto bar = testsup::load_bar();
  const TargetSet t22 = TargetSet::build(bar.program, std::array{bar.symbols.at("t22")});
  auto hit = vm::execute(bar.program, testsup::bar_input(0, 1, 0, 0, 42));
  auto r = analyze_trace(bar.program, hit, t22);
  CHECK_FALSE(r.proved_at_split);
  CHECK(r.lid == lid_of_full_path(hit));
  CHECK(r.prefix_len == hit.locations.size());
}

TEST_CASE("analyze: a reachable call ahead blocks proofs until it is behind") {
  auto res = vm::assemble(
      "JUMPDEST\nINPUT\nEXTCALL\nPOP\nJUMPDEST\nPUSH 1\nPOP\nSTOP\n");
  auto r = analyze(res.program, testsup::words_be({1, 2}),
                   TargetSet::build(res.program, {}));
  REQUIRE(r.proved_at_split);
  // The first split point (entry) has the call ahead; the proof can only
  // land at the block that starts after it.
  CHECK(r.prefix_len > 3);
}

TEST_CASE("analyze: imprecise mode captures entire paths") {
  auto bar = testsup::load_bar();
  const TargetSet t22 = TargetSet::build(bar.program, std::array{bar.symbols.at("t22")});
  AnalyzeOptions opts;
  opts.assume_targets_reachable = true;
  auto input = testsup::bar_input(3, 2, 1, 9, 0);
  auto trace = vm::execute(bar.program, input);
  auto r = analyze(bar.program, input, t22, opts);
  CHECK_FALSE(r.proved_at_split);
  CHECK(r.prefix_len == trace.locations.size());
  CHECK(r.lid == lid_of_full_path(trace));

  // Split points cover every first-visit leader of the whole path.
  std::vector<Loc> expect;
  std::unordered_set<Loc> seen;
  for (Loc l : trace.locations)
    if (bar.program.is_leader(l) && seen.insert(l).second) expect.push_back(l);
  CHECK(r.split_points == expect);
}

TEST_CASE("analyze: never fails to return, across random programs") {
  testsup::Rng rng(77);
  for (int i = 0; i < 300; ++i) {
    auto p = testsup::random_program(rng);
    std::vector<Loc> tls;
    for (int t = 0; t < 2; ++t) tls.push_back(static_cast<Loc>(testsup::below(rng, p.size())));
    const TargetSet targets = TargetSet::build(p, tls);
    AnalyzeOptions opts;
    opts.step_budget = 256;
    auto input = testsup::small_input(static_cast<unsigned>(rng() % 16),
                                      static_cast<unsigned>(rng() % 16));
    auto r = analyze(p, input, targets, opts);
    auto trace = vm::execute(p, input, 256);
    REQUIRE(r.prefix_len <= trace.locations.size());
    REQUIRE(r.prefix_len >= 1);
    if (!r.proved_at_split) REQUIRE(r.prefix_len == trace.locations.size());
  }
}
