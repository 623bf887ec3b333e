#include <catch2/catch_amalgamated.hpp>

#include "finch/ast.hpp"
#include "finch/parser.hpp"
#include "finch/printer.hpp"
#include "test_support.hpp"

using namespace finch;

TEST_CASE("well_formed: advanceAll outside any clocked context") {
  auto r = parse_text(
      "def main() {\n"
      "  async { advanceAll; }\n"
      "}\n");
  REQUIRE(r.program.has_value());
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].message.find("advanceAll") != std::string::npos);
}

TEST_CASE("well_formed: nqueens encoding is clean") {
  auto p = testing::load_kernel("nqueens");
  CHECK(well_formed(p).empty());
}

TEST_CASE("well_formed: dangling call") {
  auto r = parse_text("def main() { frobnicate(1); }");
  REQUIRE(r.program.has_value());
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].message.find("undefined method") != std::string::npos);
}

TEST_CASE("well_formed: arity mismatch and duplicate methods") {
  auto r = parse_text(
      "def f(x: int) { skip; }\n"
      "def f(y: int) { skip; }\n"
      "def main() { f(1, 2); }\n");
  REQUIRE(r.program.has_value());
  REQUIRE(r.diagnostics.size() == 2);
}

TEST_CASE("well_formed: advanceAll legal in entry body and clocked asyncs") {
  auto r = parse_text(
      "def main() {\n"
      "  finish { async clocked(c) { advanceAll; } }\n"
      "  advanceAll;\n"
      "}\n");
  REQUIRE(r.program.has_value());
  CHECK(r.diagnostics.empty());
}

TEST_CASE("structurally_equal: reflexivity on a parsed tree") {
  auto p = testing::parse_ok(
      "def main() { finish { for (i = 0; i < 4; i = i + 1) { async { skip; } } } }");
  CHECK(structurally_equal(p.methods[0].body, p.methods[0].body));
  auto q = testing::parse_ok(
      "def main() { finish { for (i = 0; i < 4; i = i + 1) { async { skip; } } } }");
  CHECK(structurally_equal(p.methods[0].body, q.methods[0].body));
}

TEST_CASE("structurally_equal: fused tree differs from its input") {
  // The running example before and after Finish Fusion.
  auto a = testing::parse_ok(
      "def main() { finish { x[0] = 1; } finish { y[0] = 2; } }");
  auto b = testing::parse_ok(
      "def main() { finish { x[0] = 1; y[0] = 2; } }");
  CHECK(!structurally_equal(a.methods[0].body, b.methods[0].body));
}

TEST_CASE("structurally_equal: alpha-equivalence on compiler temporaries") {
  auto a = testing::parse_ok("def main() { $t0 = 1; x = $t0 + 2; }");
  auto b = testing::parse_ok("def main() { $u = 1; x = $u + 2; }");
  auto c = testing::parse_ok("def main() { $u = 1; x = $v + 2; }");
  auto d = testing::parse_ok("def main() { t0 = 1; x = t0 + 2; }");
  CHECK(structurally_equal(a.methods[0].body, b.methods[0].body));
  CHECK(!structurally_equal(a.methods[0].body, c.methods[0].body));
  // User names never alpha-match temporaries.
  CHECK(!structurally_equal(a.methods[0].body, d.methods[0].body));
}

TEST_CASE("structurally_equal: temporaries map bijectively") {
  auto a = testing::parse_ok("def main() { $a = 1; $b = 2; }");
  auto b = testing::parse_ok("def main() { $x = 1; $x = 2; }");
  CHECK(!structurally_equal(a.methods[0].body, b.methods[0].body));
}

TEST_CASE("structurally_equal: symmetric and transitive across renamings") {
  auto t1 = testing::parse_ok("def main() { $p = 0; while ($p < 3) { $p = $p + 1; } }");
  auto t2 = testing::parse_ok("def main() { $q = 0; while ($q < 3) { $q = $q + 1; } }");
  auto t3 = testing::parse_ok("def main() { $r = 0; while ($r < 3) { $r = $r + 1; } }");
  CHECK(structurally_equal(t1.methods[0].body, t2.methods[0].body));
  CHECK(structurally_equal(t2.methods[0].body, t1.methods[0].body));
  CHECK(structurally_equal(t2.methods[0].body, t3.methods[0].body));
  CHECK(structurally_equal(t1.methods[0].body, t3.methods[0].body));
}

TEST_CASE("seq normalization: splicing and unit cases") {
  auto inner = mk::seq({mk::skip(), mk::assign("x", mk::int_lit(1))});
  auto outer = mk::seq({inner, mk::seq({}), mk::assign("y", mk::int_lit(2))});
  REQUIRE(outer->kind == StmtKind::Seq);
  CHECK(outer->stmts.size() == 2);
  CHECK(mk::seq({})->kind == StmtKind::Skip);
  auto single = mk::seq({mk::assign("z", mk::int_lit(3))});
  CHECK(single->kind == StmtKind::Assign);
}
