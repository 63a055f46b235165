// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/container/small_vector.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lafuzz/vm.hpp"

namespace lafuzz::absint {

using vm::Loc;
using vm::Program;
using vm::Word;

/// Flat constant-propagation lattice: Bottom < Const(c) < Top.
class AbsValue {
 public:
  enum class Kind : std::uint8_t { Bottom = 0, Const = 1, Top = 2 };

  constexpr AbsValue() = default;
  static constexpr AbsValue bottom() { return AbsValue(Kind::Bottom, 0); }
  static constexpr AbsValue top() { return AbsValue(Kind::Top, 0); }
  static constexpr AbsValue constant(Word c) { return AbsValue(Kind::Const, c); }

  constexpr Kind kind() const { return kind_; }
  constexpr bool is_bottom() const { return kind_ == Kind::Bottom; }
  constexpr bool is_const() const { return kind_ == Kind::Const; }
  constexpr bool is_top() const { return kind_ == Kind::Top; }
  constexpr Word value() const { return value_; }

  bool operator==(const AbsValue&) const = default;

 private:
  constexpr AbsValue(Kind k, Word v) : kind_(k), value_(v) {}
  Kind kind_ = Kind::Bottom;
  Word value_ = 0;
};

/// Least upper bound in the flat lattice.
constexpr AbsValue join_value(AbsValue a, AbsValue b) {
  if (a.is_bottom()) return b;
  if (b.is_bottom()) return a;
  if (a.is_top() || b.is_top()) return AbsValue::top();
  return a.value() == b.value() ? a : AbsValue::top();
}

enum class Space : std::uint8_t { Memory = 0, Storage = 1 };

/// Provenance of a stack value, used to refine branch conditions. A slot
/// whose value was loaded from a constant address (possibly run through
/// ISZERO or compared against a constant) lets a taken or fall-through
/// branch edge narrow the originating cell.
struct Origin {
  enum class Kind : std::uint8_t { None = 0, Cell = 1, Pred = 2 };
  enum class Pred : std::uint8_t { IsZero = 0, EqConst = 1 };

  Kind kind = Kind::None;
  Space space = Space::Memory;
  Word addr = 0;
  Pred pred = Pred::IsZero;
  Word cmp = 0;
  bool negated = false;

  static Origin none() { return {}; }
  static Origin cell(Space s, Word a) {
    Origin o;
    o.kind = Kind::Cell;
    o.space = s;
    o.addr = a;
    return o;
  }

  bool operator==(const Origin&) const = default;
};

struct Slot {
  AbsValue value;
  Origin origin;

  bool operator==(const Slot&) const = default;
};

/// Finite map from constant addresses to abstract values, kept as a small
/// sorted vector: a handful of cells is the common case and copies happen on
/// every fixed-point step. Absent keys read as Const(0) until the map is
/// havocked, Top afterwards.
struct AbsMap {
  using Entry = std::pair<Word, AbsValue>;
  boost::container::small_vector<Entry, 8> entries;  // sorted by address
  bool havocked = false;

  AbsValue defaulted() const { return havocked ? AbsValue::top() : AbsValue::constant(0); }

  AbsValue read(Word addr) const {
    for (const Entry& e : entries) {
      if (e.first == addr) return e.second;
      if (e.first > addr) break;
    }
    return defaulted();
  }

  void write(Word addr, AbsValue v) {
    auto it = entries.begin();
    while (it != entries.end() && it->first < addr) ++it;
    const bool present = it != entries.end() && it->first == addr;
    if (v == defaulted()) {
      if (present) entries.erase(it);
    } else if (present) {
      it->second = v;
    } else {
      entries.insert(it, {addr, v});
    }
  }

  void havoc() {
    entries.clear();
    havocked = true;
  }

  bool operator==(const AbsMap&) const = default;
};

/// Abstract machine state at one program point. `reachable == false` is the
/// bottom state. `stack_unknown` is the widening applied when states of
/// different stack depth meet: the stack depth becomes unknown and every
/// slot reads Top.
struct AbsState {
  bool reachable = false;
  bool stack_unknown = false;
  boost::container::small_vector<Slot, 8> stack;
  AbsMap memory;
  AbsMap storage;

  static AbsState initial() {
    AbsState s;
    s.reachable = true;
    return s;
  }
  static AbsState bottom() { return {}; }

  bool depth_conflict() const { return stack_unknown; }

  bool operator==(const AbsState&) const = default;
};

/// Pointwise join. States of unequal stack depth widen to a state with
/// unknown stack and havocked maps.
AbsState join_state(const AbsState& a, const AbsState& b);

/// Joins `from` into `into`; returns true when `into` changed.
bool join_into(AbsState& into, const AbsState& from);

struct Successor {
  Loc loc;
  AbsState state;
};

/// One abstract step at `loc`. Constant operands fold through the concrete
/// semantics; anything else produces Top. Unresolved jump targets fan out to
/// every jumpdest. An empty result means the instruction halts or the state
/// is infeasible at this point.
std::vector<Successor> transfer(const AbsState& state, Loc loc, const Program& program);

class TraceMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PrefixResult {
  AbsState state;           // postcondition of the prefix
  std::optional<Loc> next;  // location following the prefix, if the trace continues
};

/// Incremental prefix inference: consumes one recorded trace location at a
/// time, keeping the postcondition of the prefix consumed so far. Each step
/// restricts the instruction at `loc` to the branch that reaches the
/// recorded `next` location, refining branched-on cells where the flat
/// domain can express the taken direction.
class PrefixWalker {
 public:
  explicit PrefixWalker(const Program& program)
      : program_(&program), state_(AbsState::initial()) {}

  /// Returns false when (loc -> next) cannot correspond to the program; the
  /// walker is unusable afterwards.
  bool step(Loc loc, Loc next);

  /// Applies a trace-final instruction with no recorded continuation,
  /// joining whatever successors it has (none for a halt).
  void finish(Loc loc);

  const AbsState& state() const { return state_; }

 private:
  const Program* program_;
  AbsState state_;
};

/// Abstractly executes `path[0..prefix_len)` restricting every branch to the
/// concrete successor recorded in `path`. Input reads produce Top, so the
/// result covers all inputs exercising this prefix. Throws
/// TraceMismatchError when the path cannot correspond to the program.
PrefixResult prefix_inference(const Program& program, std::span<const Loc> path,
                              std::size_t prefix_len);

inline PrefixResult prefix_inference(const Program& program, std::span<const Loc> prefix) {
  return prefix_inference(program, prefix, prefix.size());
}

/// Target locations with a constant-time membership mask.
struct TargetSet {
  std::vector<Loc> locations;
  std::vector<std::uint8_t> mask;

  static TargetSet build(const Program& program, std::span<const Loc> locs);
  bool contains(Loc l) const { return l < mask.size() && mask[l]; }
  bool empty() const { return locations.empty(); }
};

struct SuffixCheckResult {
  bool unreachable = false;
  std::map<Loc, AbsState> visited;
  std::size_t iterations = 0;
  bool capped = false;  // iteration limit hit; reported as reachable
};

struct SuffixLimits {
  std::size_t max_iterations = 1u << 20;
};

/// Forward worklist fixed point from (loc, phi) over per-location joined
/// states. Unreachable iff no target location and no Extcall instruction
/// ever acquires a reachable state; calls are conservatively assumed to lead
/// to targets.
SuffixCheckResult targets_unreachable(const Program& program, Loc loc, const AbsState& phi,
                                      const TargetSet& targets, const SuffixLimits& limits = {});

}  // namespace lafuzz::absint
