// SPDX-License-Identifier: Apache-2.0
//
// Content fingerprints: 64-bit FNV-1a of the serialized artifact bytes,
// rendered as 16 hex chars. Every pipeline stage stamps the fingerprint of
// its upstream input so that mixing artifacts from different models aborts
// instead of silently producing garbage.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "vbp/rng.hpp"

namespace vbp {

std::string fingerprint_bytes(std::string_view bytes);

// Reads the whole file. Throws FormatError when unreadable.
std::string fingerprint_file(const std::string& path);

// Temp-file-then-rename; the destination is never observed half-written.
void write_file_atomic(const std::string& path, std::string_view bytes);

std::string read_file(const std::string& path);

}  // namespace vbp
