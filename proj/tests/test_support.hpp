// Shared helpers for the test suites: kernel loading, parse shorthands, an
// independent n-queens enumerator and a small random-program generator.
#pragma once

#include <catch2/catch_amalgamated.hpp>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "finch/ast.hpp"
#include "finch/parser.hpp"
#include "finch/printer.hpp"

#ifndef FINCH_KERNEL_DIR
#define FINCH_KERNEL_DIR "kernels"
#endif
#ifndef FINCH_GOLDEN_DIR
#define FINCH_GOLDEN_DIR "tests/golden"
#endif

namespace testing {

inline std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline finch::Program parse_ok(const std::string& text) {
  auto r = finch::parse_text(text);
  if (!r.diagnostics.empty()) {
    CAPTURE(text, r.diagnostics[0].message, r.diagnostics[0].loc.line);
    FAIL("unexpected diagnostics");
  }
  REQUIRE(r.program.has_value());
  return *r.program;
}

inline finch::Program load_kernel(const std::string& name) {
  std::string path = std::string(FINCH_KERNEL_DIR) + "/" + name + ".finch";
  auto r = finch::parse(finch::SourceFile{path, slurp(path)});
  if (!r.diagnostics.empty()) {
    CAPTURE(path, r.diagnostics[0].message, r.diagnostics[0].loc.line);
    FAIL("kernel has diagnostics");
  }
  REQUIRE(r.program.has_value());
  return *r.program;
}

inline finch::Program load_golden(const std::string& name) {
  std::string path = std::string(FINCH_GOLDEN_DIR) + "/" + name + ".finch";
  auto r = finch::parse(finch::SourceFile{path, slurp(path)});
  if (!r.diagnostics.empty()) {
    CAPTURE(path, r.diagnostics[0].message, r.diagnostics[0].loc.line);
    FAIL("golden file has diagnostics");
  }
  REQUIRE(r.program.has_value());
  return *r.program;
}

// Brute-force n-queens solution enumerator, independent of the interpreter:
// explicit backtracking over column permutations with diagonal checks.
inline void nqueens_solutions(int n, int row, std::vector<int>& cols,
                              std::vector<std::vector<int>>& out) {
  if (row == n) {
    out.push_back(cols);
    return;
  }
  for (int c = 0; c < n; ++c) {
    bool ok = true;
    for (int r = 0; r < row && ok; ++r) {
      if (cols[r] == c) ok = false;
      if (cols[r] == c - (row - r)) ok = false;
      if (cols[r] == c + (row - r)) ok = false;
    }
    if (!ok) continue;
    cols[row] = c;
    nqueens_solutions(n, row + 1, cols, out);
  }
}

inline std::vector<std::vector<int>> nqueens_solutions(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cols(static_cast<size_t>(n), 0);
  nqueens_solutions(n, 0, cols, out);
  return out;
}

}  // namespace testing
