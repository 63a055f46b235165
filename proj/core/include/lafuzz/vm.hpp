// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lafuzz::vm {

/// Machine word. All arithmetic wraps modulo 2^64; division and modulo by
/// zero yield 0, so every opcode is total.
using Word = std::uint64_t;

/// Index into a program's instruction sequence.
using Loc = std::uint32_t;

constexpr std::size_t kMaxStackDepth = 1024;
constexpr std::size_t kMaxInputLen = 256;
constexpr std::uint64_t kDefaultStepBudget = 65536;

enum class Op : std::uint8_t {
  Stop = 0x00,
  Add = 0x01,
  Sub = 0x02,
  Mul = 0x03,
  Div = 0x04,
  Mod = 0x05,
  Lt = 0x10,
  Gt = 0x11,
  Eq = 0x12,
  IsZero = 0x13,
  And = 0x14,
  Or = 0x15,
  Xor = 0x16,
  Not = 0x17,
  Input = 0x20,
  Pop = 0x30,
  Mload = 0x31,
  Mstore = 0x32,
  Sload = 0x33,
  Sstore = 0x34,
  Jump = 0x40,
  Jumpi = 0x41,
  Jumpdest = 0x42,
  Push = 0x50,
  Dup = 0x60,   // binary encoding 0x60 + (n-1), n in 1..16
  Swap = 0x70,  // binary encoding 0x70 + (n-1)
  Extcall = 0x80,
  Targetable = 0x90,
  Fail = 0xF0,
};

/// One decoded instruction. `n` is the 1-based depth for Dup/Swap and 0
/// otherwise. `imm` is meaningful only for Push.
struct Instruction {
  Op op = Op::Stop;
  std::uint8_t n = 0;
  Word imm = 0;

  bool operator==(const Instruction&) const = default;
};

/// Number of stack operands an opcode consumes / produces.
struct StackEffect {
  std::uint8_t pops;
  std::uint8_t pushes;
};
StackEffect stack_effect(const Instruction& ins);

const char* op_name(Op op);

/// Concrete semantics of the pure binary operators (Add..Xor), shared by the
/// interpreter and the constant-folding analysis.
constexpr Word eval_binop(Op op, Word a, Word b) {
  switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return b == 0 ? 0 : a / b;
    case Op::Mod: return b == 0 ? 0 : a % b;
    case Op::Lt: return a < b ? 1 : 0;
    case Op::Gt: return a > b ? 1 : 0;
    case Op::Eq: return a == b ? 1 : 0;
    case Op::And: return a & b;
    case Op::Or: return a | b;
    case Op::Xor: return a ^ b;
    default: return 0;
  }
}

constexpr Word eval_unop(Op op, Word a) {
  switch (op) {
    case Op::IsZero: return a == 0 ? 1 : 0;
    case Op::Not: return ~a;
    default: return 0;
  }
}

constexpr bool is_binop(Op op) {
  return op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div || op == Op::Mod ||
         op == Op::Lt || op == Op::Gt || op == Op::Eq || op == Op::And || op == Op::Or ||
         op == Op::Xor;
}

/// Validated bytecode. Jump targets executed at runtime must land on
/// Jumpdest instructions; block leaders are the entry, every jumpdest and
/// every instruction following a Jump/Jumpi/Extcall.
class Program {
 public:
  Program() = default;

  const std::vector<Instruction>& instructions() const { return instructions_; }
  const std::vector<Loc>& jumpdests() const { return jumpdests_; }
  const std::vector<Loc>& block_leaders() const { return block_leaders_; }
  Loc entry() const { return 0; }
  std::size_t size() const { return instructions_.size(); }

  const Instruction& at(Loc loc) const { return instructions_[loc]; }

  bool is_jumpdest(Word target) const {
    return target < jumpdest_mask_.size() && jumpdest_mask_[static_cast<std::size_t>(target)];
  }
  bool is_leader(Loc loc) const {
    return loc < leader_mask_.size() && leader_mask_[loc];
  }

 private:
  friend Program validate(std::vector<Instruction> instructions);

  std::vector<Instruction> instructions_;
  std::vector<Loc> jumpdests_;
  std::vector<Loc> block_leaders_;
  std::vector<std::uint8_t> jumpdest_mask_;
  std::vector<std::uint8_t> leader_mask_;
};

class ValidateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks a raw instruction sequence and computes jumpdests and block
/// leaders. Throws ValidateError on an empty sequence or malformed Dup/Swap
/// depth.
Program validate(std::vector<Instruction> instructions);

enum class RunStatus : std::uint8_t {
  Stopped = 0,
  Failed = 1,
  OutOfSteps = 2,
  InvalidJump = 3,
  StackError = 4,
};

const char* status_name(RunStatus s);

/// The concrete path exercised by one input: every executed location in
/// order, plus one (from, to) edge per executed Jump/Jumpi (fall-through
/// included for Jumpi).
struct ExecTrace {
  std::vector<Loc> locations;
  std::vector<std::pair<Loc, Loc>> branch_edges;
  RunStatus status = RunStatus::Stopped;
  std::uint64_t steps_used = 0;

  void clear() {
    locations.clear();
    branch_edges.clear();
    status = RunStatus::Stopped;
    steps_used = 0;
  }
};

/// Runs `program` on `input`, appending into a caller-owned trace so hot
/// loops can reuse buffers. Never throws: abnormal termination is encoded in
/// the trace status. Input is consumed eight bytes at a time (big-endian) by
/// Input and Extcall; exhausted bytes read as zero.
void execute_into(const Program& program, std::span<const std::uint8_t> input,
                  std::uint64_t step_budget, ExecTrace& out);

ExecTrace execute(const Program& program, std::span<const std::uint8_t> input,
                  std::uint64_t step_budget = kDefaultStepBudget);

using PathId = std::uint64_t;

/// 64-bit truncated SHA-256 over the branch-edge sequence and final status.
/// Two traces with equal branch decisions and status get equal ids.
PathId path_id(const ExecTrace& trace);

}  // namespace lafuzz::vm
