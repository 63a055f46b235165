// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#include "lafuzz/assembler.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <optional>
#include <unordered_map>

namespace lafuzz::vm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<Op> simple_mnemonic(std::string_view m) {
  static const std::unordered_map<std::string_view, Op> table = {
      {"STOP", Op::Stop},       {"ADD", Op::Add},
      {"SUB", Op::Sub},         {"MUL", Op::Mul},
      {"DIV", Op::Div},         {"MOD", Op::Mod},
      {"LT", Op::Lt},           {"GT", Op::Gt},
      {"EQ", Op::Eq},           {"ISZERO", Op::IsZero},
      {"AND", Op::And},         {"OR", Op::Or},
      {"XOR", Op::Xor},         {"NOT", Op::Not},
      {"INPUT", Op::Input},     {"POP", Op::Pop},
      {"MLOAD", Op::Mload},     {"MSTORE", Op::Mstore},
      {"SLOAD", Op::Sload},     {"SSTORE", Op::Sstore},
      {"JUMP", Op::Jump},       {"JUMPI", Op::Jumpi},
      {"JUMPDEST", Op::Jumpdest}, {"PUSH", Op::Push},
      {"EXTCALL", Op::Extcall}, {"TARGETABLE", Op::Targetable},
      {"FAIL", Op::Fail},
  };
  auto it = table.find(m);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

bool parse_depth_suffix(std::string_view m, std::string_view prefix, std::uint8_t& n_out) {
  if (m.size() <= prefix.size() || m.substr(0, prefix.size()) != prefix) return false;
  unsigned n = 0;
  auto digits = m.substr(prefix.size());
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), n);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return false;
  if (n < 1 || n > 16) return false;
  n_out = static_cast<std::uint8_t>(n);
  return true;
}

bool valid_label(std::string_view name) {
  if (name.empty()) return false;
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return !std::isdigit(static_cast<unsigned char>(name.front()));
}

}  // namespace

AsmResult assemble(std::string_view source) {
  struct PendingRef {
    std::size_t instr_index;
    std::string label;
    int line;
  };

  std::vector<Instruction> instructions;
  std::map<std::string, Loc> symbols;
  std::vector<PendingRef> refs;

  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= source.size()) {
    const std::size_t eol = source.find('\n', pos);
    std::string_view line = source.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                             : eol - pos);
    pos = eol == std::string_view::npos ? source.size() + 1 : eol + 1;
    ++line_no;

    if (auto comment = line.find(';'); comment != std::string_view::npos)
      line = line.substr(0, comment);
    line = trim(line);

    // Labels, possibly several on one line, possibly followed by an instruction.
    while (true) {
      const std::size_t colon = line.find(':');
      if (colon == std::string_view::npos) break;
      std::string_view name = trim(line.substr(0, colon));
      if (!valid_label(name))
        throw AsmError(line_no, "invalid label name '" + std::string(name) + "'");
      if (symbols.count(std::string(name)))
        throw AsmError(line_no, "duplicate label '" + std::string(name) + "'");
      symbols[std::string(name)] = static_cast<Loc>(instructions.size());
      line = trim(line.substr(colon + 1));
    }
    if (line.empty()) continue;

    const std::size_t sp = line.find_first_of(" \t");
    std::string_view mnemonic = sp == std::string_view::npos ? line : line.substr(0, sp);
    std::string_view operand =
        sp == std::string_view::npos ? std::string_view{} : trim(line.substr(sp + 1));

    std::string upper(mnemonic);
    std::transform(upper.begin(), upper.end(), upper.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });

    Instruction ins;
    if (auto op = simple_mnemonic(upper)) {
      ins.op = *op;
    } else if (std::uint8_t n = 0; parse_depth_suffix(upper, "DUP", n)) {
      ins.op = Op::Dup;
      ins.n = n;
    } else if (parse_depth_suffix(upper, "SWAP", n)) {
      ins.op = Op::Swap;
      ins.n = n;
    } else {
      throw AsmError(line_no, "unknown mnemonic '" + std::string(mnemonic) + "'");
    }

    if (ins.op == Op::Push) {
      if (operand.empty()) throw AsmError(line_no, "PUSH requires an immediate");
      if (operand.front() == '@') {
        refs.push_back({instructions.size(), std::string(operand.substr(1)), line_no});
      } else {
        Word value = 0;
        std::string_view digits = operand;
        int base = 10;
        if (digits.size() > 2 && digits[0] == '0' && (digits[1] == 'x' || digits[1] == 'X')) {
          digits.remove_prefix(2);
          base = 16;
        }
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value, base);
        if (ec != std::errc() || ptr != digits.data() + digits.size())
          throw AsmError(line_no, "bad PUSH immediate '" + std::string(operand) + "'");
        ins.imm = value;
      }
    } else if (!operand.empty()) {
      throw AsmError(line_no, std::string(op_name(ins.op)) + " takes no operand");
    }

    instructions.push_back(ins);
  }

  for (const auto& ref : refs) {
    auto it = symbols.find(ref.label);
    if (it == symbols.end()) throw AsmError(ref.line, "undefined label '" + ref.label + "'");
    instructions[ref.instr_index].imm = it->second;
  }

  // A label may point one past the last instruction only if nothing jumps there;
  // validate() rejects empty programs and computes leaders.
  if (instructions.empty()) throw AsmError(line_no, "empty program");

  AsmResult result;
  result.program = validate(std::move(instructions));
  result.symbols = std::move(symbols);
  return result;
}

std::vector<std::uint8_t> encode_program(const Program& program) {
  std::vector<std::uint8_t> out = {'M', 'V', 'M', '1'};
  out.push_back(1);  // format version
  const auto count = static_cast<std::uint32_t>(program.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
  for (const Instruction& ins : program.instructions()) {
    std::uint8_t byte = static_cast<std::uint8_t>(ins.op);
    if (ins.op == Op::Dup || ins.op == Op::Swap) byte += static_cast<std::uint8_t>(ins.n - 1);
    out.push_back(byte);
    if (ins.op == Op::Push)
      for (int i = 7; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(ins.imm >> (8 * i)));
  }
  return out;
}

Program decode_program(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 9 || bytes[0] != 'M' || bytes[1] != 'V' || bytes[2] != 'M' || bytes[3] != '1')
    throw ValidateError("bad program magic");
  if (bytes[4] != 1) throw ValidateError("unsupported program format version");
  std::uint32_t count = 0;
  for (int i = 0; i < 4; ++i) count = (count << 8) | bytes[5 + i];

  std::vector<Instruction> instructions;
  instructions.reserve(count);
  std::size_t off = 9;
  for (std::uint32_t i = 0; i < count; ++i) {
    if (off >= bytes.size()) throw ValidateError("truncated program");
    const std::uint8_t byte = bytes[off++];
    Instruction ins;
    if (byte >= static_cast<std::uint8_t>(Op::Dup) &&
        byte < static_cast<std::uint8_t>(Op::Dup) + 16) {
      ins.op = Op::Dup;
      ins.n = static_cast<std::uint8_t>(byte - static_cast<std::uint8_t>(Op::Dup) + 1);
    } else if (byte >= static_cast<std::uint8_t>(Op::Swap) &&
               byte < static_cast<std::uint8_t>(Op::Swap) + 16) {
      ins.op = Op::Swap;
      ins.n = static_cast<std::uint8_t>(byte - static_cast<std::uint8_t>(Op::Swap) + 1);
    } else {
      switch (static_cast<Op>(byte)) {
        case Op::Stop: case Op::Add: case Op::Sub: case Op::Mul: case Op::Div:
        case Op::Mod: case Op::Lt: case Op::Gt: case Op::Eq: case Op::IsZero:
        case Op::And: case Op::Or: case Op::Xor: case Op::Not: case Op::Input:
        case Op::Pop: case Op::Mload: case Op::Mstore: case Op::Sload:
        case Op::Sstore: case Op::Jump: case Op::Jumpi: case Op::Jumpdest:
        case Op::Push: case Op::Extcall: case Op::Targetable: case Op::Fail:
          ins.op = static_cast<Op>(byte);
          break;
        default:
          throw ValidateError("unknown opcode byte " + std::to_string(byte));
      }
    }
    if (ins.op == Op::Push) {
      if (off + 8 > bytes.size()) throw ValidateError("PUSH without immediate");
      Word v = 0;
      for (int b = 0; b < 8; ++b) v = (v << 8) | bytes[off++];
      ins.imm = v;
    }
    instructions.push_back(ins);
  }
  if (off != bytes.size()) throw ValidateError("trailing bytes after program");
  return validate(std::move(instructions));
}

}  // namespace lafuzz::vm
