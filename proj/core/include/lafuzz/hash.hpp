// lafuzz: targeted greybox fuzzing with an online lookahead analysis
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

namespace lafuzz {

/// First 8 bytes (big-endian) of SHA-256 over the given buffer.
std::uint64_t sha256_trunc64(const void* data, std::size_t len);

}  // namespace lafuzz
