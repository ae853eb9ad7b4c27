// SPDX-License-Identifier: Apache-2.0
//
// Tiny delimited-table helper for the CSV/TSV exports. One header line,
// fixed column order, %.9g floats.
#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace vbp {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string dump(char sep = ',') const {
    std::string out;
    for (size_t i = 0; i < header.size(); ++i) {
      if (i) out += sep;
      out += header[i];
    }
    out += '\n';
    for (const auto& row : rows) {
      for (size_t i = 0; i < row.size(); ++i) {
        if (i) out += sep;
        out += row[i];
      }
      out += '\n';
    }
    return out;
  }
};

inline std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace vbp
