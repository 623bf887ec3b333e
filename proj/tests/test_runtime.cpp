#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "finch/oracle.hpp"
#include "finch/parser.hpp"
#include "finch/runtime.hpp"
#include "test_support.hpp"

using namespace finch;

namespace {

RunResult run_kernel(const Program& p, long long n, int workers,
                     uint64_t seed = 0, bool trace = false) {
  RuntimeConfig cfg;
  cfg.nWorkers = workers;
  cfg.seed = seed;
  cfg.trace = trace;
  return run(p, cfg, {Value{n}});
}

long long array_cell(const Frame& f, const std::string& name, size_t idx) {
  auto it = f.find(name);
  REQUIRE(it != f.end());
  const ArrayRef* arr = std::get_if<ArrayRef>(&it->second);
  REQUIRE(arr);
  REQUIRE(idx < (*arr)->elems.size());
  return (*arr)->elems[idx];
}

}  // namespace

TEST_CASE("nqueens counters: joins per invocation, spawns per iteration") {
  auto p = testing::load_kernel("nqueens");
  auto oracle = serial_oracle(p, {Value{4ll}});
  auto mw = run_kernel(p, 4, 4);

  // Spawn structure is schedule-independent; both engines agree.
  CHECK(mw.counters.finishes == oracle.counters.finishes);
  CHECK(mw.counters.asyncs == oracle.counters.asyncs);
  // Each invocation runs one join and spawns one task per column.
  CHECK(oracle.counters.asyncs == 4 * oracle.counters.finishes);
  CHECK(mw.checksum == oracle.checksum);
}

TEST_CASE("serial oracle: nqueens solutions match the brute-force enumerator") {
  auto solutions = testing::nqueens_solutions(6);
  CHECK(solutions.size() == 4);

  // The kernel records one cell per distinct two-row prefix; for n=6 those
  // prefixes are unique per solution, so the total equals the count.
  std::set<std::pair<int, int>> prefixes;
  for (const auto& s : solutions) prefixes.insert({s[0], s[1]});
  REQUIRE(prefixes.size() == solutions.size());

  auto p = testing::load_kernel("nqueens");
  auto oracle = serial_oracle(p, {Value{6ll}});
  CHECK(array_cell(oracle.finalFrame, "total", 0) ==
        static_cast<long long>(solutions.size()));

  auto mw = run_kernel(p, 6, 4);
  CHECK(array_cell(mw.finalFrame, "total", 0) ==
        static_cast<long long>(solutions.size()));
}

TEST_CASE("exception aggregation: sibling failures meet in one join") {
  auto p = testing::parse_ok(
      "def main() {\n"
      "  finish {\n"
      "    async { throw new Alpha; }\n"
      "    async { throw new Beta; }\n"
      "  }\n"
      "}\n");
  auto oracle = serial_oracle(p, {});
  REQUIRE(oracle.exception);
  CHECK(normalize_exc(oracle.exception) == "M[P(Alpha),P(Beta),]");

  for (int workers : {1, 2, 4}) {
    auto mw = run_kernel(p, 0, workers);
    REQUIRE(mw.exception);
    CHECK(exc_equal(mw.exception, oracle.exception));
  }
}

TEST_CASE("one failing task does not stop its siblings") {
  auto p = testing::parse_ok(
      "def main(n: int) {\n"
      "  a = newarray(n);\n"
      "  try {\n"
      "    finish {\n"
      "      for (i = 0; i < n; i = i + 1) {\n"
      "        async { if (i == 3) { throw new Boom; } a[i] = 1; }\n"
      "      }\n"
      "    }\n"
      "  } catch (e: Exception) { a[3] = 7; }\n"
      "}\n");
  for (int workers : {1, 4}) {
    auto r = run_kernel(p, 8, workers);
    CHECK(!r.exception);
    for (size_t i = 0; i < 8; ++i)
      CHECK(array_cell(r.finalFrame, "a", i) == (i == 3 ? 7 : 1));
  }
}

TEST_CASE("top-level throw surfaces as the run's outcome") {
  auto p = testing::parse_ok("def main() { throw new Fatal; }");
  auto oracle = serial_oracle(p, {});
  REQUIRE(oracle.exception);
  CHECK(normalize_exc(oracle.exception) == "P(Fatal)");
  auto mw = run_kernel(p, 0, 2);
  REQUIRE(mw.exception);
  CHECK(exc_equal(mw.exception, oracle.exception));
}

TEST_CASE("idle workers: all busy reads zero, main alone reads the rest") {
  auto p = testing::parse_ok(
      "def main() {\n"
      "  r = newarray(1);\n"
      "  r[0] = idleWorkers();\n"
      "}\n");
  auto one = run_kernel(p, 0, 1);
  CHECK(array_cell(one.finalFrame, "r", 0) == 0);
  auto four = run_kernel(p, 0, 4);
  CHECK(array_cell(four.finalFrame, "r", 0) == 3);
}

TEST_CASE("idle hook overrides the counter") {
  auto p = testing::parse_ok(
      "def main() {\n"
      "  r = newarray(2);\n"
      "  r[0] = idleWorkers();\n"
      "  r[1] = idleWorkers();\n"
      "}\n");
  RuntimeConfig cfg;
  cfg.nWorkers = 2;
  cfg.idleHook = [](long long call) { return call == 0 ? 0ll : 5ll; };
  auto r = run(p, cfg, {});
  CHECK(array_cell(r.finalFrame, "r", 0) == 0);
  CHECK(array_cell(r.finalFrame, "r", 1) == 5);
}

TEST_CASE("nthreads builtin reports the worker count") {
  auto p = testing::parse_ok(
      "def main() { r = newarray(1); r[0] = nthreads(); }");
  auto r = run_kernel(p, 0, 4);
  CHECK(array_cell(r.finalFrame, "r", 0) == 4);
}

TEST_CASE("clock ordering: every first-phase write lands before any second") {
  auto p = testing::load_kernel("clocked_bfs");
  for (int workers : {2, 4}) {
    auto r = run_kernel(p, 24, workers, 0, /*trace=*/true);
    REQUIRE(!r.exception);
    uint64_t lastB = 0, firstA = UINT64_MAX;
    int bWrites = 0, aWrites = 0;
    for (const auto& ev : r.trace) {
      if (ev.array == "b") {
        lastB = std::max(lastB, ev.seq);
        ++bWrites;
      }
      if (ev.array == "a") {
        firstA = std::min(firstA, ev.seq);
        ++aWrites;
      }
    }
    CHECK(bWrites == 24);
    CHECK(aWrites == 24);
    CHECK(lastB < firstA);
  }
}

TEST_CASE("clocked kernels agree with the oracle across worker counts") {
  for (const char* k : {"clocked_bfs", "clocked_mst"}) {
    auto p = testing::load_kernel(k);
    auto oracle = serial_oracle(p, {Value{16ll}});
    REQUIRE(!oracle.exception);
    for (int workers : {1, 2, 4}) {
      auto mw = run_kernel(p, 16, workers);
      CAPTURE(k, workers);
      REQUIRE(!mw.exception);
      CHECK(mw.checksum == oracle.checksum);
    }
  }
}

TEST_CASE("counter equivalence: one worker matches the serial oracle") {
  for (const char* k :
       {"nqueens", "clocked_bfs", "clocked_mst", "health", "byzantine"}) {
    auto p = testing::load_kernel(k);
    long long n = std::string(k) == "health" ? 6 : 12;
    auto oracle = serial_oracle(p, {Value{n}});
    auto mw = run_kernel(p, n, 1);
    CAPTURE(k);
    CHECK(mw.counters.asyncs == oracle.counters.asyncs);
    CHECK(mw.counters.finishes == oracle.counters.finishes);
    CHECK(mw.counters.advances == oracle.counters.advances);
    CHECK(mw.counters.syntheticFinishes == oracle.counters.syntheticFinishes);
    CHECK(mw.checksum == oracle.checksum);
  }
}

TEST_CASE("scheduling jitter never changes the store") {
  auto p = testing::load_kernel("nqueens");
  auto oracle = serial_oracle(p, {Value{5ll}});
  for (int workers : {2, 8}) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      auto mw = run_kernel(p, 5, workers, seed);
      CAPTURE(workers, seed);
      CHECK(mw.checksum == oracle.checksum);
    }
  }
}

TEST_CASE("exception nesting survives the multi-worker engine") {
  auto p = testing::load_kernel("ex_spawner");
  auto oracle = serial_oracle(p, {Value{8ll}});
  REQUIRE(oracle.exception);
  // Boom wrapped by the inner join, wrapped again by the outer.
  CHECK(normalize_exc(oracle.exception) == "M[M[P(Boom),],]");
  for (int workers : {1, 2, 4}) {
    auto mw = run_kernel(p, 8, workers);
    REQUIRE(mw.exception);
    CHECK(exc_equal(mw.exception, oracle.exception));
    CHECK(mw.checksum == oracle.checksum);
  }
}

TEST_CASE("deadlock detection aborts with a diagnostic") {
  auto p = testing::parse_ok(
      "def main() { finish { async clocked(c) { advanceAll; } } }");
  RuntimeConfig cfg;
  cfg.nWorkers = 2;
  cfg.holdClock = "c";  // a phantom registrant that never arrives
  CHECK_THROWS_AS(run(p, cfg, {}), FinchDeadlock);
}

TEST_CASE("return exits the method but not the join") {
  auto p = testing::parse_ok(
      "def work(a: array) {\n"
      "  finish {\n"
      "    async { a[0] = 41; }\n"
      "    if (a[1] == 0) { return; }\n"
      "  }\n"
      "  a[1] = 99;\n"
      "}\n"
      "def main() {\n"
      "  a = newarray(2);\n"
      "  work(a);\n"
      "}\n");
  for (int workers : {1, 4}) {
    auto r = run_kernel(p, 0, workers);
    // The early return still waits for the task, then skips the tail write.
    CHECK(array_cell(r.finalFrame, "a", 0) == 41);
    CHECK(array_cell(r.finalFrame, "a", 1) == 0);
  }
  auto o = serial_oracle(p, {});
  CHECK(array_cell(o.finalFrame, "a", 0) == 41);
  CHECK(array_cell(o.finalFrame, "a", 1) == 0);
}

TEST_CASE("runtime faults carry distinguishable kinds") {
  auto oob = testing::parse_ok("def main() { a = newarray(2); a[5] = 1; }");
  auto r1 = serial_oracle(oob, {});
  REQUIRE(r1.exception);
  CHECK(normalize_exc(r1.exception) == "P(__Fault_IndexOutOfBounds)");

  auto div = testing::parse_ok("def main() { x = 1 / 0; }");
  auto r2 = serial_oracle(div, {});
  REQUIRE(r2.exception);
  CHECK(normalize_exc(r2.exception) == "P(__Fault_DivideByZero)");
}

TEST_CASE("spawned tasks see spawn-time scalars, not later updates") {
  auto p = testing::parse_ok(
      "def main(n: int) {\n"
      "  a = newarray(n);\n"
      "  finish {\n"
      "    for (i = 0; i < n; i = i + 1) {\n"
      "      async { a[i] = i * 10; }\n"
      "    }\n"
      "  }\n"
      "}\n");
  for (int workers : {1, 4}) {
    auto r = run_kernel(p, 6, workers);
    for (size_t i = 0; i < 6; ++i)
      CHECK(array_cell(r.finalFrame, "a", i) == static_cast<long long>(i) * 10);
  }
}
