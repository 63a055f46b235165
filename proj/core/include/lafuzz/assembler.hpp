// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lafuzz/vm.hpp"

namespace lafuzz::vm {

class AsmError : public std::runtime_error {
 public:
  AsmError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct AsmResult {
  Program program;
  std::map<std::string, Loc> symbols;
};

/// Assembles line-oriented source: one instruction per line, labels as
/// `name:`, `;` comments, and `@label` references in Push immediates.
/// Throws AsmError with the offending line on parse failures, duplicate or
/// undefined labels.
AsmResult assemble(std::string_view source);

/// Binary program format: "MVM1" magic, format version byte, big-endian
/// u32 instruction count, then one opcode byte per instruction followed by
/// an 8-byte big-endian immediate for Push.
std::vector<std::uint8_t> encode_program(const Program& program);
Program decode_program(std::span<const std::uint8_t> bytes);

}  // namespace lafuzz::vm
