// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>

#include "lafuzz/absint.hpp"
#include "lafuzz/assembler.hpp"
#include "support/fixtures.hpp"
#include "support/randprog.hpp"

using namespace lafuzz;
using namespace lafuzz::absint;
using vm::Loc;
using vm::Op;

namespace {

AbsValue C(vm::Word w) { return AbsValue::constant(w); }

Slot slot(AbsValue v) { return {v, Origin::none()}; }

AbsState state_with_stack(std::initializer_list<AbsValue> values) {
  AbsState s = AbsState::initial();
  for (AbsValue v : values) s.stack.push_back(slot(v));
  return s;
}

std::vector<Loc> successor_locs(const std::vector<Successor>& succ) {
  std::vector<Loc> locs;
  for (const auto& s : succ) locs.push_back(s.loc);
  std::sort(locs.begin(), locs.end());
  return locs;
}

/// Index of the first occurrence of `loc` in the trace.
std::size_t trace_index(const vm::ExecTrace& t, Loc loc) {
  for (std::size_t i = 0; i < t.locations.size(); ++i)
    if (t.locations[i] == loc) return i;
  REQUIRE(false);
  return 0;
}

/// Partial order on states, for the monotonicity property.
bool le_value(AbsValue a, AbsValue b) {
  if (a.is_bottom() || b.is_top()) return true;
  return a == b;
}

bool le_origin(const Origin& a, const Origin& b) {
  return b.kind == Origin::Kind::None || a == b;
}

bool le_map(const AbsMap& a, const AbsMap& b) {
  if (!le_value(a.defaulted(), b.defaulted())) return false;
  for (const auto& [k, v] : a.entries)
    if (!le_value(v, b.read(k))) return false;
  for (const auto& [k, v] : b.entries)
    if (!le_value(a.read(k), v)) return false;
  return true;
}

bool le_state(const AbsState& a, const AbsState& b) {
  if (!a.reachable) return true;
  if (!b.reachable) return false;
  if (!b.stack_unknown) {
    if (a.stack_unknown || a.stack.size() != b.stack.size()) return false;
    for (std::size_t i = 0; i < a.stack.size(); ++i) {
      if (!le_value(a.stack[i].value, b.stack[i].value)) return false;
      if (!le_origin(a.stack[i].origin, b.stack[i].origin)) return false;
    }
  }
  return le_map(a.memory, b.memory) && le_map(a.storage, b.storage);
}

AbsState random_state(testsup::Rng& rng) {
  AbsState s = AbsState::initial();
  const std::size_t depth = testsup::below(rng, 4);
  for (std::size_t i = 0; i < depth; ++i) {
    switch (testsup::below(rng, 3)) {
      case 0: s.stack.push_back(slot(C(testsup::below(rng, 5)))); break;
      case 1: s.stack.push_back(slot(AbsValue::top())); break;
      default: s.stack.push_back({AbsValue::top(), Origin::cell(Space::Memory,
                                                                testsup::below(rng, 3))});
    }
  }
  for (int i = 0; i < 2; ++i) {
    if (testsup::below(rng, 2))
      s.memory.write(testsup::below(rng, 4),
                     testsup::below(rng, 2) ? AbsValue::top() : C(testsup::below(rng, 9)));
    if (testsup::below(rng, 2))
      s.storage.write(testsup::below(rng, 4),
                      testsup::below(rng, 2) ? AbsValue::top() : C(testsup::below(rng, 9)));
  }
  if (testsup::below(rng, 8) == 0) s.memory.havoc();
  if (testsup::below(rng, 8) == 0) s.stack_unknown = true, s.stack.clear();
  return s;
}

/// Randomly weakens `s` into something that dominates it.
AbsState widen_randomly(AbsState s, testsup::Rng& rng) {
  for (auto& sl : s.stack) {
    if (testsup::below(rng, 2)) sl.value = AbsValue::top();
    if (testsup::below(rng, 2)) sl.origin = Origin::none();
  }
  if (testsup::below(rng, 4) == 0) {
    s.memory.havoc();
  } else {
    for (auto& [k, v] : s.memory.entries)
      if (testsup::below(rng, 2)) v = AbsValue::top();
  }
  for (auto& [k, v] : s.storage.entries)
    if (testsup::below(rng, 2)) v = AbsValue::top();
  // Normalize: drop entries equal to the default.
  AbsMap mem2;
  mem2.havocked = s.memory.havocked;
  for (auto& [k, v] : s.memory.entries) mem2.write(k, v);
  s.memory = mem2;
  if (testsup::below(rng, 8) == 0) {
    s.stack_unknown = true;
    s.stack.clear();
  }
  return s;
}

}  // namespace

TEST_CASE("join_value: flat lattice") {
  CHECK(join_value(C(256), C(257)) == AbsValue::top());
  CHECK(join_value(C(5), C(5)) == C(5));
  CHECK(join_value(AbsValue::bottom(), C(7)) == C(7));
  CHECK(join_value(AbsValue::top(), C(7)) == AbsValue::top());
  CHECK(join_value(AbsValue::bottom(), AbsValue::bottom()) == AbsValue::bottom());
}

TEST_CASE("join_state: bottom identity and slot conflict") {
  AbsState s = state_with_stack({C(1), C(2)});
  CHECK(join_state(s, AbsState::bottom()) == s);
  CHECK(join_state(AbsState::bottom(), s) == s);

  AbsState t = state_with_stack({C(1), C(3)});
  AbsState j = join_state(s, t);
  CHECK(j.stack[0].value == C(1));
  CHECK(j.stack[1].value == AbsValue::top());
}

TEST_CASE("join_state: depth conflict widens to an unknown stack") {
  // One branch pushes an extra word before the join.
  auto res = vm::assemble("INPUT\nPUSH @l\nJUMPI\nPUSH 1\nl: JUMPDEST\nSTOP\n");
  const auto& p = res.program;
  const Loc l = res.symbols.at("l");

  auto taken = vm::execute(p, testsup::words_be({1}));
  auto fall = vm::execute(p, testsup::words_be({0}));
  auto phi_taken =
      prefix_inference(p, taken.locations, trace_index(taken, l) + 1).state;
  auto phi_fall = prefix_inference(p, fall.locations, trace_index(fall, l) + 1).state;
  CHECK(phi_taken.stack.size() == 0);
  CHECK(phi_fall.stack.size() == 1);

  AbsState j = join_state(phi_taken, phi_fall);
  CHECK(j.depth_conflict());
  CHECK(j.memory.defaulted() == AbsValue::top());
}

TEST_CASE("transfer: constant folding") {
  auto res = vm::assemble("ADD\nSTOP\n");
  auto succ = transfer(state_with_stack({C(2), C(3)}), 0, res.program);
  REQUIRE(succ.size() == 1);
  CHECK(succ[0].loc == 1);
  REQUIRE(succ[0].state.stack.size() == 1);
  CHECK(succ[0].state.stack[0].value == C(5));
}

TEST_CASE("transfer: jumpi with unknown condition takes both branches") {
  auto res = vm::assemble("JUMPI\nSTOP\nJUMPDEST\nSTOP\n");
  // Stack top is the target (location 2), the condition below is unknown.
  auto succ = transfer(state_with_stack({AbsValue::top(), C(2)}), 0, res.program);
  CHECK(successor_locs(succ) == std::vector<Loc>{1, 2});
}

TEST_CASE("transfer: unresolved jump fans out to every jumpdest") {
  auto res = vm::assemble("JUMP\nSTOP\nJUMPDEST\nSTOP\nJUMPDEST\nSTOP\n");
  auto succ = transfer(state_with_stack({AbsValue::top()}), 0, res.program);
  CHECK(successor_locs(succ) == std::vector<Loc>{2, 4});
}

TEST_CASE("transfer: store through unknown address havocs the whole map") {
  auto res = vm::assemble("SSTORE\nSTOP\n");
  AbsState s = state_with_stack({C(5), AbsValue::top()});  // value 5, address unknown
  s.storage.write(9, C(1));
  auto succ = transfer(s, 0, res.program);
  REQUIRE(succ.size() == 1);
  CHECK(succ[0].state.storage.havocked);
  CHECK(succ[0].state.storage.entries.empty());
  CHECK(succ[0].state.storage.read(9) == AbsValue::top());
}

TEST_CASE("transfer: abstract stack underflow means the path is infeasible") {
  auto res = vm::assemble("ADD\nSTOP\n");
  CHECK(transfer(state_with_stack({C(1)}), 0, res.program).empty());
}

TEST_CASE("transfer: halts produce no successors") {
  auto res = vm::assemble("STOP\nFAIL\n");
  CHECK(transfer(AbsState::initial(), 0, res.program).empty());
  CHECK(transfer(AbsState::initial(), 1, res.program).empty());
}

TEST_CASE("prefix_inference: a pushed constant is known afterwards") {
  auto res = vm::assemble("PUSH 7\nSTOP\n");
  auto trace = vm::execute(res.program, {});
  auto r = prefix_inference(res.program, trace.locations, 1);
  REQUIRE(r.state.stack.size() == 1);
  CHECK(r.state.stack[0].value == C(7));
  CHECK(r.next == Loc{1});
}

TEST_CASE("prefix_inference: loop exit pins the counter cell to zero") {
  auto bar = testsup::load_bar();
  auto trace = vm::execute(bar.program, testsup::bar_input(3, 2, 1, 5, 0));
  const Loc exit1 = bar.symbols.at("exit1");
  auto r = prefix_inference(bar.program, trace.locations, trace_index(trace, exit1) + 1);
  CHECK(r.state.memory.read(0) == C(0));
}

TEST_CASE("prefix_inference: per-branch result value before the inner join") {
  auto bar = testsup::load_bar();
  const Loc join9 = bar.symbols.at("join9");

  auto even = vm::execute(bar.program, testsup::bar_input(1, 2, 4, 5, 0));
  auto r_even = prefix_inference(bar.program, even.locations, trace_index(even, join9));
  CHECK(r_even.state.memory.read(5) == C(257));

  auto odd = vm::execute(bar.program, testsup::bar_input(1, 2, 3, 5, 0));
  auto r_odd = prefix_inference(bar.program, odd.locations, trace_index(odd, join9));
  CHECK(r_odd.state.memory.read(5) == C(256));
}

TEST_CASE("prefix_inference: rejects paths that cannot match the program") {
  auto res = vm::assemble("PUSH 1\nPUSH 2\nADD\nSTOP\n");
  std::vector<Loc> bogus = {0, 2, 3};
  CHECK_THROWS_AS(prefix_inference(res.program, bogus, bogus.size()), TraceMismatchError);
}

TEST_CASE("targets_unreachable: vacuous without targets or calls") {
  auto bar = testsup::load_bar();
  auto r = targets_unreachable(bar.program, bar.program.entry(), AbsState::initial(),
                               TargetSet::build(bar.program, {}));
  CHECK(r.unreachable);
}

TEST_CASE("targets_unreachable: a reachable call is treated as reaching targets") {
  auto res = vm::assemble("PUSH 0\nEXTCALL\nSTOP\n");
  auto r = targets_unreachable(res.program, 0, AbsState::initial(),
                               TargetSet::build(res.program, {}));
  CHECK_FALSE(r.unreachable);
}

TEST_CASE("targets_unreachable: the post-join state is too weak for the loop assert") {
  auto bar = testsup::load_bar();
  const Loc join9 = bar.symbols.at("join9");
  const Loc t19 = bar.symbols.at("t19");
  const Loc t14 = bar.symbols.at("t14");

  auto even = vm::execute(bar.program, testsup::bar_input(1, 2, 4, 5, 0));
  auto odd = vm::execute(bar.program, testsup::bar_input(1, 2, 3, 5, 0));
  const std::size_t i_even = trace_index(even, join9);
  const std::size_t i_odd = trace_index(odd, join9);
  auto phi_even = prefix_inference(bar.program, even.locations, i_even + 1);
  auto phi_odd = prefix_inference(bar.program, odd.locations, i_odd + 1);
  REQUIRE(phi_even.next == phi_odd.next);

  AbsState joined = join_state(phi_even.state, phi_odd.state);
  CHECK(joined.memory.read(5) == AbsValue::top());

  auto r = targets_unreachable(bar.program, *phi_even.next, joined,
                               TargetSet::build(bar.program, std::array{t19}));
  CHECK_FALSE(r.unreachable);

  // Per-branch states prove both assert targets unreachable.
  const TargetSet both = TargetSet::build(bar.program, std::array{t14, t19});
  CHECK(targets_unreachable(bar.program, *phi_even.next, phi_even.state, both).unreachable);
  CHECK(targets_unreachable(bar.program, *phi_odd.next, phi_odd.state, both).unreachable);
}

TEST_CASE("refinement: equality against a constant pins the compared cell") {
  auto res = vm::assemble(
      "INPUT\nPUSH 0\nMSTORE\n"
      "PUSH 0\nMLOAD\nPUSH 5\nEQ\nPUSH @l\nJUMPI\nSTOP\nl: JUMPDEST\nSTOP\n");
  auto trace = vm::execute(res.program, testsup::words_be({5}));
  const Loc l = res.symbols.at("l");
  auto r = prefix_inference(res.program, trace.locations, trace_index(trace, l) + 1);
  CHECK(r.state.memory.read(0) == C(5));
}

TEST_CASE("refinement: a clobbered cell is not refined") {
  // The branched-on value was loaded before the cell was overwritten;
  // assuming it zero must not constrain the new cell content.
  auto res = vm::assemble(
      "INPUT\nPUSH 0\nMSTORE\n"
      "PUSH 0\nMLOAD\n"
      "INPUT\nPUSH 0\nMSTORE\n"
      "ISZERO\nPUSH @l\nJUMPI\nSTOP\nl: JUMPDEST\nSTOP\n");
  auto trace = vm::execute(res.program, testsup::words_be({0, 5}));
  const Loc l = res.symbols.at("l");
  auto r = prefix_inference(res.program, trace.locations, trace_index(trace, l) + 1);
  CHECK(r.state.memory.read(0) == AbsValue::top());
}

TEST_CASE("refinement: contradicting branch assumptions drop the edge") {
  auto res = vm::assemble("JUMPI\nSTOP\nJUMPDEST\nSTOP\n");
  AbsState s = AbsState::initial();
  s.memory.write(0, C(7));
  Slot cond{AbsValue::top(), Origin::none()};
  cond.origin.kind = Origin::Kind::Pred;
  cond.origin.pred = Origin::Pred::EqConst;
  cond.origin.space = Space::Memory;
  cond.origin.addr = 0;
  cond.origin.cmp = 5;  // cond is (mem[0] == 5) but mem[0] is known to be 7
  s.stack.push_back(cond);
  s.stack.push_back(slot(C(2)));  // jump target
  auto succ = transfer(s, 0, res.program);
  CHECK(successor_locs(succ) == std::vector<Loc>{1});  // only the fall-through
}

TEST_CASE("absmap: defaults, strong updates, havoc") {
  AbsMap m;
  CHECK(m.read(3) == C(0));
  m.write(3, C(9));
  CHECK(m.read(3) == C(9));
  m.write(3, C(0));  // equal to the default: normalized away
  CHECK(m.entries.empty());
  m.write(4, AbsValue::top());
  CHECK(m.read(4) == AbsValue::top());
  m.havoc();
  CHECK(m.read(3) == AbsValue::top());
  m.write(5, C(1));
  CHECK(m.read(5) == C(1));
}

TEST_CASE("property: join is commutative, associative, idempotent") {
  testsup::Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    AbsState a = random_state(rng);
    AbsState b = random_state(rng);
    AbsState c = random_state(rng);
    CHECK(join_state(a, b) == join_state(b, a));
    CHECK(join_state(a, a) == a);
    CHECK(join_state(join_state(a, b), c) == join_state(a, join_state(b, c)));
    CHECK(le_state(a, join_state(a, b)));
  }
}

TEST_CASE("property: transfer is monotone") {
  testsup::Rng rng(21);
  int checked = 0;
  for (int i = 0; i < 400; ++i) {
    auto p = testsup::random_program(rng);
    AbsState lo = random_state(rng);
    AbsState hi = widen_randomly(lo, rng);
    REQUIRE(le_state(lo, hi));
    const Loc loc = static_cast<Loc>(testsup::below(rng, p.size()));
    auto suc_lo = transfer(lo, loc, p);
    auto suc_hi = transfer(hi, loc, p);
    for (const auto& [l, t] : suc_lo) {
      bool dominated = false;
      for (const auto& [l2, t2] : suc_hi) {
        if (l2 == l && le_state(t, t2)) {
          dominated = true;
          break;
        }
      }
      CHECK(dominated);
      ++checked;
    }
  }
  CHECK(checked > 200);  // the property must not pass vacuously
}

TEST_CASE("property: the suffix fixed point is stable") {
  auto bar = testsup::load_bar();
  const Loc join9 = bar.symbols.at("join9");
  auto even = vm::execute(bar.program, testsup::bar_input(1, 2, 4, 5, 0));
  auto phi = prefix_inference(bar.program, even.locations, trace_index(even, join9) + 1);
  const TargetSet both = TargetSet::build(
      bar.program, std::array{bar.symbols.at("t14"), bar.symbols.at("t19")});
  auto r = targets_unreachable(bar.program, *phi.next, phi.state, both);
  REQUIRE(r.unreachable);
  for (auto& [loc, state] : r.visited) {
    for (auto& [l2, t2] : transfer(state, loc, bar.program)) {
      auto it = r.visited.find(l2);
      REQUIRE(it != r.visited.end());
      AbsState joined = it->second;
      CHECK_FALSE(join_into(joined, t2));
    }
  }
}

TEST_CASE("property: constant folding agrees with concrete execution") {
  // Straight-line fragments only: every operand is constant, so the abstract
  // result must equal the concrete machine lifted into the domain. The
  // concrete side is simulated independently here.
  testsup::Rng rng(400);
  static constexpr Op kOps[] = {Op::Push, Op::Push, Op::Add,  Op::Sub,    Op::Mul,
                                Op::Div,  Op::Mod,  Op::Lt,   Op::Gt,     Op::Eq,
                                Op::And,  Op::Or,   Op::Xor,  Op::IsZero, Op::Not,
                                Op::Dup,  Op::Swap, Op::Pop,  Op::Mload,  Op::Mstore};
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<vm::Instruction> code;
    const std::size_t len = 3 + testsup::below(rng, 20);
    for (std::size_t i = 0; i < len; ++i) {
      vm::Instruction ins;
      ins.op = kOps[testsup::below(rng, sizeof kOps / sizeof kOps[0])];
      if (ins.op == Op::Push) ins.imm = testsup::below(rng, 16);
      if (ins.op == Op::Dup || ins.op == Op::Swap)
        ins.n = static_cast<std::uint8_t>(1 + testsup::below(rng, 3));
      code.push_back(ins);
    }
    code.push_back({Op::Stop, 0, 0});
    auto p = vm::validate(std::move(code));
    auto trace = vm::execute(p, {}, 512);

    // Independent concrete simulation of the executed prefix.
    std::vector<vm::Word> stack;
    std::map<vm::Word, vm::Word> memory;
    for (Loc loc : trace.locations) {
      const auto& ins = p.at(loc);
      const auto eff = vm::stack_effect(ins);
      if (stack.size() < eff.pops) break;  // the machine stops here too
      switch (ins.op) {
        case Op::Push: stack.push_back(ins.imm); break;
        case Op::Pop: stack.pop_back(); break;
        case Op::IsZero:
        case Op::Not: stack.back() = vm::eval_unop(ins.op, stack.back()); break;
        case Op::Dup: stack.push_back(stack[stack.size() - ins.n]); break;
        case Op::Swap: std::swap(stack.back(), stack[stack.size() - 1 - ins.n]); break;
        case Op::Mload: {
          auto it = memory.find(stack.back());
          stack.back() = it == memory.end() ? 0 : it->second;
          break;
        }
        case Op::Mstore: {
          const vm::Word addr = stack.back();
          stack.pop_back();
          memory[addr] = stack.back();
          stack.pop_back();
          break;
        }
        case Op::Stop: break;
        default: {
          const vm::Word b = stack.back();
          stack.pop_back();
          stack.back() = vm::eval_binop(ins.op, stack.back(), b);
        }
      }
      if (ins.op == Op::Stop) break;
    }

    auto r = prefix_inference(p, trace.locations, trace.locations.size());
    REQUIRE(r.state.stack.size() == stack.size());
    for (std::size_t i = 0; i < stack.size(); ++i) REQUIRE(r.state.stack[i].value == C(stack[i]));
    for (const auto& [addr, value] : memory) REQUIRE(r.state.memory.read(addr) == C(value));
  }
}
