// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lafuzz/assembler.hpp"

#ifndef LAFUZZ_PROGRAMS_DIR
#define LAFUZZ_PROGRAMS_DIR "programs"
#endif

namespace testsup {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline lafuzz::vm::AsmResult load_program(const char* name) {
  return lafuzz::vm::assemble(read_file(std::string(LAFUZZ_PROGRAMS_DIR) + "/" + name));
}

inline lafuzz::vm::AsmResult load_bar() { return load_program("bar.asm"); }
inline lafuzz::vm::AsmResult load_bar_variant() { return load_program("bar_variant.asm"); }

/// Big-endian 8-byte words, the encoding the Input opcode consumes.
inline std::vector<std::uint8_t> words_be(std::initializer_list<std::uint64_t> words) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(words.size() * 8);
  for (std::uint64_t w : words)
    for (int i = 7; i >= 0; --i) bytes.push_back(static_cast<std::uint8_t>(w >> (8 * i)));
  return bytes;
}

/// Input for bar: (w, x, y, z, a) plus zero padding to the 64-byte seed shape.
inline std::vector<std::uint8_t> bar_input(std::uint64_t w, std::uint64_t x, std::uint64_t y,
                                           std::uint64_t z, std::uint64_t a) {
  return words_be({w, x, y, z, a, 0, 0, 0});
}

}  // namespace testsup
