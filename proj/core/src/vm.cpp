// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/vm.hpp"

#include <boost/container/small_vector.hpp>

#include "lafuzz/hash.hpp"

namespace lafuzz::vm {

StackEffect stack_effect(const Instruction& ins) {
  switch (ins.op) {
    case Op::Stop:
    case Op::Jumpdest:
    case Op::Targetable:
    case Op::Fail:
      return {0, 0};
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Mod:
    case Op::Lt:
    case Op::Gt:
    case Op::Eq:
    case Op::And:
    case Op::Or:
    case Op::Xor:
      return {2, 1};
    case Op::IsZero:
    case Op::Not:
      return {1, 1};
    case Op::Input:
    case Op::Push:
      return {0, 1};
    case Op::Pop:
      return {1, 0};
    case Op::Mload:
    case Op::Sload:
      return {1, 1};
    case Op::Mstore:
    case Op::Sstore:
      return {2, 0};
    case Op::Jump:
      return {1, 0};
    case Op::Jumpi:
      return {2, 0};
    case Op::Dup:
      return {ins.n, static_cast<std::uint8_t>(ins.n + 1)};
    case Op::Swap:
      return {static_cast<std::uint8_t>(ins.n + 1), static_cast<std::uint8_t>(ins.n + 1)};
    case Op::Extcall:
      return {1, 1};
  }
  return {0, 0};
}

const char* op_name(Op op) {
  switch (op) {
    case Op::Stop: return "STOP";
    case Op::Add: return "ADD";
    case Op::Sub: return "SUB";
    case Op::Mul: return "MUL";
    case Op::Div: return "DIV";
    case Op::Mod: return "MOD";
    case Op::Lt: return "LT";
    case Op::Gt: return "GT";
    case Op::Eq: return "EQ";
    case Op::IsZero: return "ISZERO";
    case Op::And: return "AND";
    case Op::Or: return "OR";
    case Op::Xor: return "XOR";
    case Op::Not: return "NOT";
    case Op::Input: return "INPUT";
    case Op::Pop: return "POP";
    case Op::Mload: return "MLOAD";
    case Op::Mstore: return "MSTORE";
    case Op::Sload: return "SLOAD";
    case Op::Sstore: return "SSTORE";
    case Op::Jump: return "JUMP";
    case Op::Jumpi: return "JUMPI";
    case Op::Jumpdest: return "JUMPDEST";
    case Op::Push: return "PUSH";
    case Op::Dup: return "DUP";
    case Op::Swap: return "SWAP";
    case Op::Extcall: return "EXTCALL";
    case Op::Targetable: return "TARGETABLE";
    case Op::Fail: return "FAIL";
  }
  return "?";
}

const char* status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Stopped: return "Stopped";
    case RunStatus::Failed: return "Failed";
    case RunStatus::OutOfSteps: return "OutOfSteps";
    case RunStatus::InvalidJump: return "InvalidJump";
    case RunStatus::StackError: return "StackError";
  }
  return "?";
}

Program validate(std::vector<Instruction> instructions) {
  if (instructions.empty()) throw ValidateError("empty instruction sequence");
  const std::size_t n = instructions.size();

  Program p;
  p.jumpdest_mask_.assign(n, 0);
  p.leader_mask_.assign(n, 0);
  p.leader_mask_[0] = 1;

  for (std::size_t i = 0; i < n; ++i) {
    const Instruction& ins = instructions[i];
    switch (ins.op) {
      case Op::Dup:
      case Op::Swap:
        if (ins.n < 1 || ins.n > 16)
          throw ValidateError(std::string(op_name(ins.op)) + " depth out of range at location " +
                              std::to_string(i));
        break;
      case Op::Jumpdest:
        p.jumpdest_mask_[i] = 1;
        p.leader_mask_[i] = 1;
        break;
      case Op::Jump:
      case Op::Jumpi:
      case Op::Extcall:
        if (i + 1 < n) p.leader_mask_[i + 1] = 1;
        break;
      default:
        break;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (p.jumpdest_mask_[i]) p.jumpdests_.push_back(static_cast<Loc>(i));
    if (p.leader_mask_[i]) p.block_leaders_.push_back(static_cast<Loc>(i));
  }
  p.instructions_ = std::move(instructions);
  return p;
}

namespace {

inline Word read_input_word(std::span<const std::uint8_t> input, std::size_t& cursor) {
  Word w = 0;
  for (int i = 0; i < 8; ++i) {
    const std::size_t idx = cursor + static_cast<std::size_t>(i);
    w = (w << 8) | (idx < input.size() ? input[idx] : 0);
  }
  cursor += 8;
  return w;
}

/// Word-addressed store; programs touch a handful of cells, so a small flat
/// vector beats a hash map in the execution hot loop.
struct WordMap {
  boost::container::small_vector<std::pair<Word, Word>, 8> kv;

  Word load(Word addr) const {
    for (const auto& [k, v] : kv)
      if (k == addr) return v;
    return 0;
  }
  void store(Word addr, Word value) {
    for (auto& [k, v] : kv) {
      if (k == addr) {
        v = value;
        return;
      }
    }
    kv.push_back({addr, value});
  }
};

}  // namespace

void execute_into(const Program& program, std::span<const std::uint8_t> input,
                  std::uint64_t step_budget, ExecTrace& out) {
  out.clear();

  boost::container::small_vector<Word, 64> stack;
  WordMap memory;
  WordMap storage;
  std::size_t input_cursor = 0;

  const std::size_t code_len = program.size();
  Loc pc = program.entry();
  out.status = RunStatus::Stopped;

  std::uint64_t steps = 0;
  while (true) {
    if (pc >= code_len) {
      // Falling off the end is an implicit stop.
      out.status = RunStatus::Stopped;
      break;
    }
    if (steps >= step_budget) {
      out.status = RunStatus::OutOfSteps;
      break;
    }
    ++steps;
    out.locations.push_back(pc);

    const Instruction& ins = program.at(pc);
    const StackEffect eff = stack_effect(ins);
    if (stack.size() < eff.pops) {
      out.status = RunStatus::StackError;
      break;
    }

    Loc next = pc + 1;
    bool halt = false;
    switch (ins.op) {
      case Op::Stop:
        out.status = RunStatus::Stopped;
        halt = true;
        break;
      case Op::Fail:
        out.status = RunStatus::Failed;
        halt = true;
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div:
      case Op::Mod:
      case Op::Lt:
      case Op::Gt:
      case Op::Eq:
      case Op::And:
      case Op::Or:
      case Op::Xor: {
        const Word b = stack.back();
        stack.pop_back();
        stack.back() = eval_binop(ins.op, stack.back(), b);
        break;
      }
      case Op::IsZero:
      case Op::Not:
        stack.back() = eval_unop(ins.op, stack.back());
        break;
      case Op::Input:
        if (stack.size() >= kMaxStackDepth) {
          out.status = RunStatus::StackError;
          halt = true;
          break;
        }
        stack.push_back(read_input_word(input, input_cursor));
        break;
      case Op::Push:
        if (stack.size() >= kMaxStackDepth) {
          out.status = RunStatus::StackError;
          halt = true;
          break;
        }
        stack.push_back(ins.imm);
        break;
      case Op::Pop:
        stack.pop_back();
        break;
      case Op::Mload:
        stack.back() = memory.load(stack.back());
        break;
      case Op::Sload:
        stack.back() = storage.load(stack.back());
        break;
      case Op::Mstore: {
        const Word addr = stack.back();
        stack.pop_back();
        const Word value = stack.back();
        stack.pop_back();
        memory.store(addr, value);
        break;
      }
      case Op::Sstore: {
        const Word addr = stack.back();
        stack.pop_back();
        const Word value = stack.back();
        stack.pop_back();
        storage.store(addr, value);
        break;
      }
      case Op::Jump: {
        const Word target = stack.back();
        stack.pop_back();
        if (!program.is_jumpdest(target)) {
          out.status = RunStatus::InvalidJump;
          halt = true;
          break;
        }
        next = static_cast<Loc>(target);
        out.branch_edges.emplace_back(pc, next);
        break;
      }
      case Op::Jumpi: {
        const Word target = stack.back();
        stack.pop_back();
        const Word cond = stack.back();
        stack.pop_back();
        if (cond != 0) {
          if (!program.is_jumpdest(target)) {
            out.status = RunStatus::InvalidJump;
            halt = true;
            break;
          }
          next = static_cast<Loc>(target);
        }
        out.branch_edges.emplace_back(pc, next);
        break;
      }
      case Op::Jumpdest:
      case Op::Targetable:
        break;
      case Op::Dup: {
        if (stack.size() >= kMaxStackDepth) {
          out.status = RunStatus::StackError;
          halt = true;
          break;
        }
        stack.push_back(stack[stack.size() - ins.n]);
        break;
      }
      case Op::Swap: {
        std::swap(stack.back(), stack[stack.size() - 1 - ins.n]);
        break;
      }
      case Op::Extcall: {
        // Environment read: the call result is the next word of the input
        // stream; the argument is consumed.
        stack.back() = read_input_word(input, input_cursor);
        break;
      }
    }
    if (halt) break;
    pc = next;
  }

  out.steps_used = out.locations.size();
}

ExecTrace execute(const Program& program, std::span<const std::uint8_t> input,
                  std::uint64_t step_budget) {
  ExecTrace t;
  execute_into(program, input, step_budget, t);
  return t;
}

PathId path_id(const ExecTrace& trace) {
  std::vector<std::uint8_t> buf;
  buf.reserve(trace.branch_edges.size() * 16 + 1);
  auto put64 = [&buf](std::uint64_t v) {
    for (int i = 7; i >= 0; --i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (const auto& [from, to] : trace.branch_edges) {
    put64(from);
    put64(to);
  }
  buf.push_back(static_cast<std::uint8_t>(trace.status));
  return sha256_trunc64(buf.data(), buf.size());
}

}  // namespace lafuzz::vm
