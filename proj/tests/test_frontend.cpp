#include <catch2/catch_amalgamated.hpp>

#include "finch/parser.hpp"
#include "finch/printer.hpp"
#include "test_support.hpp"

using namespace finch;

static void check_roundtrip(const Program& p) {
  std::string text = pretty(p);
  auto r = parse_text(text);
  if (!r.program.has_value()) {
    CAPTURE(text, r.diagnostics.empty() ? "" : r.diagnostics[0].message);
    FAIL("re-parse failed");
  }
  if (!structurally_equal(p, *r.program)) {
    CAPTURE(text, pretty(*r.program));
    FAIL("round trip not structurally equal");
  }
}

TEST_CASE("parse: minimal program") {
  auto p = testing::parse_ok("def main() { finish { async { skip; } } }");
  REQUIRE(p.methods.size() == 1);
  const auto& body = p.methods[0].body;
  REQUIRE(body->kind == StmtKind::Finish);
  REQUIRE(body->body->kind == StmtKind::Async);
  CHECK(body->body->body->kind == StmtKind::Skip);
}

TEST_CASE("parse: nqueens kernel shape") {
  auto p = testing::load_kernel("nqueens");
  const Method* nq = p.find("nqueens");
  REQUIRE(nq != nullptr);
  // Body is Finish(For(Async(...))).
  REQUIRE(nq->body->kind == StmtKind::Finish);
  REQUIRE(nq->body->body->kind == StmtKind::For);
  CHECK(nq->body->body->body->kind == StmtKind::Async);
}

TEST_CASE("parse: braces optional for single statements") {
  auto p = testing::parse_ok("def main() { finish finish skip; }");
  REQUIRE(p.methods[0].body->kind == StmtKind::Finish);
  REQUIRE(p.methods[0].body->body->kind == StmtKind::Finish);
  CHECK(p.methods[0].body->body->body->kind == StmtKind::Skip);

  auto q = testing::parse_ok("def main() { finish async x = 1; }");
  REQUIRE(q.methods[0].body->kind == StmtKind::Finish);
  CHECK(q.methods[0].body->body->kind == StmtKind::Async);
}

TEST_CASE("parse: pending list syntax") {
  auto p = testing::parse_ok(
      "def main() { $e = null; finish { skip; } pending($e, $f) }");
  const auto& b = p.methods[0].body;
  REQUIRE(b->kind == StmtKind::Seq);
  const auto& fin = b->stmts[1];
  REQUIRE(fin->kind == StmtKind::Finish);
  REQUIRE(fin->pending.size() == 2);
  CHECK(fin->pending[0] == "$e");
  CHECK(fin->pending[1] == "$f");
  check_roundtrip(p);
}

TEST_CASE("parse: switch with fall-through cases and default") {
  auto p = testing::parse_ok(
      "def main() {\n"
      "  switch (x) {\n"
      "    case 0:\n"
      "      a[0] = 1;\n"
      "      advanceAll;\n"
      "    case 1:\n"
      "      a[1] = 2;\n"
      "    default:\n"
      "      skip;\n"
      "  }\n"
      "}\n");
  const auto& sw = p.methods[0].body;
  REQUIRE(sw->kind == StmtKind::Switch);
  REQUIRE(sw->cases.size() == 3);
  CHECK(sw->cases[0].value == 0);
  CHECK(sw->cases[2].isDefault);
  check_roundtrip(p);
}

TEST_CASE("parse: first syntax error reported with location") {
  auto r = parse_text("def main() {\n  x = ;\n}\n");
  CHECK(!r.program.has_value());
  REQUIRE(r.diagnostics.size() == 1);
  CHECK(r.diagnostics[0].loc.line == 2);
}

TEST_CASE("parse: exception forms") {
  auto p = testing::parse_ok(
      "def main() {\n"
      "  try {\n"
      "    throw new Boom;\n"
      "  } catch (e: Exception) {\n"
      "    x = null;\n"
      "    if (x != null) { throw x; }\n"
      "    throw new ME(e);\n"
      "  }\n"
      "}\n");
  check_roundtrip(p);
}

TEST_CASE("pretty: empty body renders as skip") {
  auto p = testing::parse_ok("def main() { }");
  CHECK(p.methods[0].body->kind == StmtKind::Skip);
  std::string text = pretty(p);
  CHECK(text.find("skip;") != std::string::npos);
  check_roundtrip(p);
}

TEST_CASE("pretty: operator precedence round-trips") {
  auto p = testing::parse_ok(
      "def main() {\n"
      "  x = (a + b) * c - d / (e % 2);\n"
      "  y = a < b && (c == d || !(e >= f));\n"
      "  z = -(a + 1) + -b;\n"
      "}\n");
  check_roundtrip(p);
}

TEST_CASE("pretty: method with slot annotation round-trips") {
  auto p = testing::parse_ok(
      "def helper(n: int) slot($gex$helper) { $gex$helper = null; }\n"
      "def main() { helper(3); }\n");
  CHECK(p.methods[0].exceptionSlot == "$gex$helper");
  check_roundtrip(p);
}

TEST_CASE("round-trip: every kernel in the corpus") {
  for (const char* k : {"nqueens", "clocked_bfs", "clocked_mst", "health",
                        "byzantine", "ex_pipeline", "ex_spawner"}) {
    auto p = testing::load_kernel(k);
    check_roundtrip(p);
  }
}

TEST_CASE("round-trip: generated temporaries and builtins") {
  auto p = testing::parse_ok(
      "def main(n: int) {\n"
      "  $w = idleWorkers();\n"
      "  $t = nthreads();\n"
      "  a = newarray(n * n);\n"
      "  for (; $w < n; ) { $w = $w + 1; }\n"
      "  for (i = 0; i < n; i = i + 1) { a[i] = i; }\n"
      "}\n");
  check_roundtrip(p);
}

TEST_CASE("parser is total on malformed inputs (diagnostics, no crash)") {
  for (const char* bad :
       {"def", "def main( {", "def main() { finish }", "def main() { x = 1 }",
        "def main() { switch (x) { case : skip; } }", "def main() { @ }",
        "def main() { try { skip; } }", "def main() { async clocked() skip; }"}) {
    auto r = parse_text(bad);
    CHECK(!r.program.has_value());
    CHECK(!r.diagnostics.empty());
  }
}
