// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/absint.hpp"

#include <algorithm>
#include <deque>

namespace lafuzz::absint {

using vm::Instruction;
using vm::Op;

namespace {

Origin join_origin(const Origin& a, const Origin& b) {
  return a == b ? a : Origin::none();
}

AbsMap join_map(const AbsMap& a, const AbsMap& b) {
  AbsMap r;
  r.havocked = a.havocked || b.havocked;
  const AbsValue def = r.defaulted();
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() || ib != b.entries.end()) {
    Word key;
    AbsValue va, vb;
    if (ib == b.entries.end() || (ia != a.entries.end() && ia->first < ib->first)) {
      key = ia->first;
      va = ia->second;
      vb = b.defaulted();
      ++ia;
    } else if (ia == a.entries.end() || ib->first < ia->first) {
      key = ib->first;
      vb = ib->second;
      va = a.defaulted();
      ++ib;
    } else {
      key = ia->first;
      va = ia->second;
      vb = ib->second;
      ++ia;
      ++ib;
    }
    const AbsValue v = join_value(va, vb);
    if (!(v == def)) r.entries.push_back({key, v});  // keys ascend, stays sorted
  }
  return r;
}

/// In-place stack/map manipulation for one instruction. On an unknown-depth
/// stack pops read Top and pushes are absorbed.
struct Stepper {
  AbsState& s;
  bool infeasible = false;
  bool halted = false;

  Slot pop() {
    if (s.stack_unknown) return {AbsValue::top(), Origin::none()};
    if (s.stack.empty()) {
      infeasible = true;
      return {AbsValue::top(), Origin::none()};
    }
    Slot out = s.stack.back();
    s.stack.pop_back();
    if (out.value.is_bottom()) infeasible = true;
    return out;
  }

  void push(Slot v) {
    if (s.stack_unknown) return;
    if (s.stack.size() >= vm::kMaxStackDepth) {
      halted = true;
      return;
    }
    s.stack.push_back(std::move(v));
  }

  void invalidate(Space space, std::optional<Word> addr) {
    for (Slot& slot : s.stack) {
      const Origin& o = slot.origin;
      if (o.kind == Origin::Kind::None || o.space != space) continue;
      if (addr && o.addr != *addr) continue;
      slot.origin = Origin::none();
    }
  }
};

enum class StepOutcome { Ok, Halt, Infeasible };

AbsMap& map_for(AbsState& s, Space space) {
  return space == Space::Memory ? s.memory : s.storage;
}

/// Applies every opcode except control flow (Stop/Fail/Jump/Jumpi).
StepOutcome apply_straightline(AbsState& s, const Instruction& ins) {
  Stepper st{s};
  switch (ins.op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Mod:
    case Op::Lt:
    case Op::Gt:
    case Op::And:
    case Op::Or:
    case Op::Xor:
    case Op::Eq: {
      const Slot b = st.pop();
      const Slot a = st.pop();
      if (st.infeasible) return StepOutcome::Infeasible;
      Slot r;
      if (a.value.is_const() && b.value.is_const()) {
        r.value = AbsValue::constant(vm::eval_binop(ins.op, a.value.value(), b.value.value()));
      } else {
        r.value = AbsValue::top();
        if (ins.op == Op::Eq) {
          // Comparing a cell against a known constant: remember which cell,
          // so a later branch on this value can pin it.
          const Slot* konst = nullptr;
          const Slot* cell = nullptr;
          if (a.value.is_const() && b.origin.kind == Origin::Kind::Cell) {
            konst = &a;
            cell = &b;
          } else if (b.value.is_const() && a.origin.kind == Origin::Kind::Cell) {
            konst = &b;
            cell = &a;
          }
          if (konst) {
            r.origin.kind = Origin::Kind::Pred;
            r.origin.pred = Origin::Pred::EqConst;
            r.origin.space = cell->origin.space;
            r.origin.addr = cell->origin.addr;
            r.origin.cmp = konst->value.value();
          }
        }
      }
      st.push(std::move(r));
      break;
    }
    case Op::IsZero: {
      const Slot a = st.pop();
      if (st.infeasible) return StepOutcome::Infeasible;
      Slot r;
      if (a.value.is_const()) {
        r.value = AbsValue::constant(vm::eval_unop(Op::IsZero, a.value.value()));
      } else {
        r.value = AbsValue::top();
        if (a.origin.kind == Origin::Kind::Cell) {
          r.origin.kind = Origin::Kind::Pred;
          r.origin.pred = Origin::Pred::IsZero;
          r.origin.space = a.origin.space;
          r.origin.addr = a.origin.addr;
        } else if (a.origin.kind == Origin::Kind::Pred) {
          // Predicates evaluate to 0 or 1, so ISZERO is plain negation.
          r.origin = a.origin;
          r.origin.negated = !r.origin.negated;
        }
      }
      st.push(std::move(r));
      break;
    }
    case Op::Not: {
      const Slot a = st.pop();
      if (st.infeasible) return StepOutcome::Infeasible;
      st.push({a.value.is_const() ? AbsValue::constant(~a.value.value()) : AbsValue::top(),
               Origin::none()});
      break;
    }
    case Op::Input:
      st.push({AbsValue::top(), Origin::none()});
      break;
    case Op::Push:
      st.push({AbsValue::constant(ins.imm), Origin::none()});
      break;
    case Op::Pop:
      st.pop();
      break;
    case Op::Mload:
    case Op::Sload: {
      const Space space = ins.op == Op::Mload ? Space::Memory : Space::Storage;
      const Slot addr = st.pop();
      if (st.infeasible) return StepOutcome::Infeasible;
      if (addr.value.is_const()) {
        const Word a = addr.value.value();
        st.push({map_for(s, space).read(a), Origin::cell(space, a)});
      } else {
        st.push({AbsValue::top(), Origin::none()});
      }
      break;
    }
    case Op::Mstore:
    case Op::Sstore: {
      const Space space = ins.op == Op::Mstore ? Space::Memory : Space::Storage;
      const Slot addr = st.pop();
      const Slot value = st.pop();
      if (st.infeasible) return StepOutcome::Infeasible;
      if (addr.value.is_const()) {
        map_for(s, space).write(addr.value.value(), value.value);
        st.invalidate(space, addr.value.value());
      } else {
        map_for(s, space).havoc();
        st.invalidate(space, std::nullopt);
      }
      break;
    }
    case Op::Dup: {
      if (s.stack_unknown) break;
      if (s.stack.size() < ins.n) return StepOutcome::Infeasible;
      st.push(s.stack[s.stack.size() - ins.n]);
      break;
    }
    case Op::Swap: {
      if (s.stack_unknown) break;
      if (s.stack.size() < static_cast<std::size_t>(ins.n) + 1) return StepOutcome::Infeasible;
      std::swap(s.stack.back(), s.stack[s.stack.size() - 1 - ins.n]);
      break;
    }
    case Op::Extcall: {
      st.pop();
      if (st.infeasible) return StepOutcome::Infeasible;
      st.push({AbsValue::top(), Origin::none()});  // havocked return value
      break;
    }
    case Op::Jumpdest:
    case Op::Targetable:
      break;
    case Op::Stop:
    case Op::Fail:
    case Op::Jump:
    case Op::Jumpi:
      break;  // handled by callers
  }
  if (st.infeasible) return StepOutcome::Infeasible;
  if (st.halted) return StepOutcome::Halt;
  return StepOutcome::Ok;
}

/// Narrows a map cell to a known constant. False means the assumption
/// contradicts the state. The cell's runtime content is unchanged by an
/// assumption, so slot origins stay valid.
bool meet_cell(AbsState& s, Space space, Word addr, Word c) {
  AbsMap& m = map_for(s, space);
  const AbsValue cur = m.read(addr);
  if (cur.is_bottom()) return false;
  if (cur.is_const()) return cur.value() == c;
  m.write(addr, AbsValue::constant(c));
  return true;
}

bool exclude_cell(AbsState& s, Space space, Word addr, Word c) {
  const AbsValue cur = map_for(s, space).read(addr);
  return !(cur.is_const() && cur.value() == c);
}

/// Assumes the branch condition `cond` is nonzero (taken) or zero
/// (fall-through) in `s`. Returns false when the edge is infeasible.
bool refine_assume(AbsState& s, const Slot& cond, bool value_nonzero) {
  Origin::Pred pred;
  bool negated;
  Word cmp;
  switch (cond.origin.kind) {
    case Origin::Kind::None:
      return true;
    case Origin::Kind::Cell:
      // The value *is* the cell, so zero-wise it behaves as NOT(ISZERO(cell)).
      pred = Origin::Pred::IsZero;
      negated = true;
      cmp = 0;
      break;
    case Origin::Kind::Pred:
      pred = cond.origin.pred;
      negated = cond.origin.negated;
      cmp = pred == Origin::Pred::IsZero ? 0 : cond.origin.cmp;
      break;
    default:
      return true;
  }
  const bool cell_equals = value_nonzero != negated;
  if (cell_equals) return meet_cell(s, cond.origin.space, cond.origin.addr, cmp);
  return exclude_cell(s, cond.origin.space, cond.origin.addr, cmp);
}

}  // namespace

AbsState join_state(const AbsState& a, const AbsState& b) {
  if (!a.reachable) return b;
  if (!b.reachable) return a;

  AbsState r;
  r.reachable = true;
  const bool already_unknown = a.stack_unknown || b.stack_unknown;
  if (already_unknown || a.stack.size() != b.stack.size()) {
    r.stack_unknown = true;
    if (already_unknown) {
      r.memory = join_map(a.memory, b.memory);
      r.storage = join_map(a.storage, b.storage);
    } else {
      // Fresh depth conflict widens the whole state to Top.
      r.memory.havoc();
      r.storage.havoc();
    }
    return r;
  }

  r.stack.resize(a.stack.size());
  for (std::size_t i = 0; i < a.stack.size(); ++i) {
    r.stack[i].value = join_value(a.stack[i].value, b.stack[i].value);
    r.stack[i].origin = join_origin(a.stack[i].origin, b.stack[i].origin);
  }
  r.memory = join_map(a.memory, b.memory);
  r.storage = join_map(a.storage, b.storage);
  return r;
}

bool join_into(AbsState& into, const AbsState& from) {
  AbsState joined = join_state(into, from);
  if (joined == into) return false;
  into = std::move(joined);
  return true;
}

/// Emits every (successor location, state) pair to `emit`. Makes a single
/// local copy of `state` up front, so `emit` may mutate whatever storage
/// `state` refers to.
template <typename Emit>
void transfer_impl(const AbsState& state, Loc loc, const Program& program, Emit&& emit) {
  if (!state.reachable || loc >= program.size()) return;
  const Instruction& ins = program.at(loc);

  switch (ins.op) {
    case Op::Stop:
    case Op::Fail:
      return;
    case Op::Jump: {
      AbsState s = state;
      Stepper st{s};
      const Slot target = st.pop();
      if (st.infeasible) return;
      if (target.value.is_const()) {
        if (!program.is_jumpdest(target.value.value())) return;  // halts
        emit(static_cast<Loc>(target.value.value()), std::move(s));
      } else {
        for (Loc d : program.jumpdests()) emit(d, AbsState(s));
      }
      return;
    }
    case Op::Jumpi: {
      AbsState s = state;
      Stepper st{s};
      const Slot target = st.pop();
      const Slot cond = st.pop();
      if (st.infeasible) return;

      auto emit_jump = [&](AbsState&& base) {
        if (target.value.is_const()) {
          if (program.is_jumpdest(target.value.value()))
            emit(static_cast<Loc>(target.value.value()), std::move(base));
        } else {
          for (Loc d : program.jumpdests()) emit(d, AbsState(base));
        }
      };

      if (cond.value.is_const()) {
        if (cond.value.value() != 0) {
          emit_jump(std::move(s));
        } else if (loc + 1 < program.size()) {
          emit(loc + 1, std::move(s));
        }
        return;
      }

      AbsState taken = s;
      if (refine_assume(taken, cond, true)) emit_jump(std::move(taken));
      if (loc + 1 < program.size()) {
        AbsState fall = std::move(s);
        if (refine_assume(fall, cond, false)) emit(loc + 1, std::move(fall));
      }
      return;
    }
    default: {
      AbsState s = state;
      if (apply_straightline(s, ins) == StepOutcome::Ok && loc + 1 < program.size())
        emit(loc + 1, std::move(s));
      return;
    }
  }
}

std::vector<Successor> transfer(const AbsState& state, Loc loc, const Program& program) {
  std::vector<Successor> out;
  transfer_impl(state, loc, program,
                [&](Loc l, AbsState&& s) { out.push_back({l, std::move(s)}); });
  return out;
}

namespace {

enum class WalkResult { Ok, Halted, Mismatch };

/// Applies the instruction at `loc` keeping only the branch toward `next`.
WalkResult step_along(AbsState& s, Loc loc, Loc next, const Program& program) {
  const Instruction& ins = program.at(loc);
  switch (ins.op) {
    case Op::Stop:
    case Op::Fail:
      return WalkResult::Mismatch;  // nothing follows a halt
    case Op::Jump: {
      Stepper st{s};
      const Slot target = st.pop();
      if (st.infeasible) return WalkResult::Mismatch;
      if (!program.is_jumpdest(next)) return WalkResult::Mismatch;
      if (target.value.is_const()) {
        if (target.value.value() != next) return WalkResult::Mismatch;
      } else if (target.origin.kind == Origin::Kind::Cell) {
        // The recorded edge resolves the jump target for this path family.
        if (!meet_cell(s, target.origin.space, target.origin.addr, next))
          return WalkResult::Mismatch;
      }
      return WalkResult::Ok;
    }
    case Op::Jumpi: {
      Stepper st{s};
      const Slot target = st.pop();
      const Slot cond = st.pop();
      if (st.infeasible) return WalkResult::Mismatch;

      const bool can_fall = next == loc + 1;
      const bool can_jump = program.is_jumpdest(next) &&
                            (!target.value.is_const() || target.value.value() == next);
      if (!can_fall && !can_jump) return WalkResult::Mismatch;

      if (cond.value.is_const()) {
        const bool taken = cond.value.value() != 0;
        if (taken && !can_jump) return WalkResult::Mismatch;
        if (!taken && !can_fall) return WalkResult::Mismatch;
        return WalkResult::Ok;
      }
      if (can_fall && !can_jump) {
        if (!refine_assume(s, cond, false)) return WalkResult::Mismatch;
      } else if (can_jump && !can_fall) {
        if (!refine_assume(s, cond, true)) return WalkResult::Mismatch;
        if (!target.value.is_const() && target.origin.kind == Origin::Kind::Cell) {
          if (!meet_cell(s, target.origin.space, target.origin.addr, next))
            return WalkResult::Mismatch;
        }
      }
      // When the taken edge lands on loc+1 the direction is ambiguous; no
      // refinement is sound in that case.
      return WalkResult::Ok;
    }
    default: {
      switch (apply_straightline(s, ins)) {
        case StepOutcome::Ok:
          return next == loc + 1 ? WalkResult::Ok : WalkResult::Mismatch;
        case StepOutcome::Halt:
        case StepOutcome::Infeasible:
          return WalkResult::Mismatch;
      }
      return WalkResult::Mismatch;
    }
  }
}

}  // namespace

bool PrefixWalker::step(Loc loc, Loc next) {
  if (loc >= program_->size()) return false;
  return step_along(state_, loc, next, *program_) == WalkResult::Ok;
}

void PrefixWalker::finish(Loc loc) {
  std::vector<Successor> succ = transfer(state_, loc, *program_);
  if (succ.empty()) return;  // halt: the state after Stop/Fail is unchanged
  AbsState joined = std::move(succ.front().state);
  for (std::size_t i = 1; i < succ.size(); ++i) joined = join_state(joined, succ[i].state);
  state_ = std::move(joined);
}

PrefixResult prefix_inference(const Program& program, std::span<const Loc> path,
                              std::size_t prefix_len) {
  if (prefix_len == 0 || prefix_len > path.size())
    throw TraceMismatchError("prefix length out of range");
  if (path[0] != program.entry()) throw TraceMismatchError("path does not start at entry");

  PrefixWalker walker(program);
  for (std::size_t k = 0; k + 1 < prefix_len; ++k) {
    if (!walker.step(path[k], path[k + 1]))
      throw TraceMismatchError("trace does not match program at index " + std::to_string(k));
  }

  const Loc last = path[prefix_len - 1];
  if (last >= program.size()) throw TraceMismatchError("path location out of range");
  if (prefix_len < path.size()) {
    if (!walker.step(last, path[prefix_len]))
      throw TraceMismatchError("trace does not match program at index " +
                               std::to_string(prefix_len - 1));
    return {walker.state(), path[prefix_len]};
  }

  walker.finish(last);
  return {walker.state(), std::nullopt};
}

TargetSet TargetSet::build(const Program& program, std::span<const Loc> locs) {
  TargetSet t;
  t.mask.assign(program.size(), 0);
  for (Loc l : locs) {
    if (l >= program.size())
      throw std::invalid_argument("target location " + std::to_string(l) + " out of range");
    if (!t.mask[l]) {
      t.mask[l] = 1;
      t.locations.push_back(l);
    }
  }
  std::sort(t.locations.begin(), t.locations.end());
  return t;
}

SuffixCheckResult targets_unreachable(const Program& program, Loc loc, const AbsState& phi,
                                      const TargetSet& targets, const SuffixLimits& limits) {
  SuffixCheckResult res;
  if (!phi.reachable) {
    res.unreachable = true;
    return res;
  }

  auto fatal = [&](Loc l) {
    return targets.contains(l) || (l < program.size() && program.at(l).op == Op::Extcall);
  };

  res.visited.emplace(loc, phi);
  if (fatal(loc)) {
    res.unreachable = false;
    return res;
  }

  std::deque<Loc> queue;
  std::vector<std::uint8_t> queued(program.size() + 1, 0);
  queue.push_back(loc);
  queued[loc] = 1;

  bool reached = false;
  while (!queue.empty() && !reached) {
    if (++res.iterations > limits.max_iterations) {
      res.capped = true;
      res.unreachable = false;
      return res;
    }
    const Loc cur = queue.front();
    queue.pop_front();
    queued[cur] = 0;

    // std::map references stay valid across the emits below.
    const AbsState& state = res.visited.at(cur);
    transfer_impl(state, cur, program, [&](Loc l, AbsState&& s) {
      if (reached) return;
      auto it = res.visited.find(l);
      if (it == res.visited.end()) {
        res.visited.emplace(l, std::move(s));
        if (fatal(l)) {
          reached = true;
          return;
        }
        if (!queued[l]) {
          queue.push_back(l);
          queued[l] = 1;
        }
      } else if (join_into(it->second, s)) {
        if (!queued[l]) {
          queue.push_back(l);
          queued[l] = 1;
        }
      }
    });
  }

  res.unreachable = !reached;
  return res;
}

}  // namespace lafuzz::absint
