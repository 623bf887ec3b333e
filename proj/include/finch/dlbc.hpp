// Loop chunking: the static form (one chunk per declared worker) and the
// dynamic load-balanced form driven by the runtime idle-worker count, with
// the phase-switch variant for clocked loops.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "finch/analysis.hpp"
#include "finch/ast.hpp"

namespace finch {

// ---------------------------------------------------------------------------
// Partition arithmetic
// ---------------------------------------------------------------------------

struct Partition {
  struct Range {
    long long lo = 0;
    long long hi = 0;  // half-open
    long long len() const { return hi - lo; }
    bool operator==(const Range&) const = default;
  };
  std::vector<Range> chunks;  // idle workers, in assignment order
  Range parent;               // current worker's share
};

// Replays the template arithmetic: totWorkers = workers+1,
// eqChunk = actualn/totWorkers, newN = actualn-eqChunk,
// rem = actualn%totWorkers + workers,
// then chunks of eqChunk + rem/totWorkers while ii < newN, rem falling by one
// per chunk; the parent keeps [newN, actualn), the smallest share.
inline Partition compute_partition(long long actualn, long long workers,
                                   long long start = 0) {
  if (workers < 1) throw std::domain_error("compute_partition: workers < 1");
  if (actualn < 1) throw std::domain_error("compute_partition: actualn < 1");
  const long long totWorkers = workers + 1;
  const long long eqChunk = actualn / totWorkers;
  const long long newN = actualn - eqChunk;
  long long rem = actualn % totWorkers + workers;
  Partition part;
  long long ii = 0;
  while (ii < newN) {
    long long kx = ii + eqChunk + rem / totWorkers;
    part.chunks.push_back({start + ii, start + kx});
    --rem;
    ii = kx;
  }
  part.parent = {start + newN, start + actualn};
  return part;
}

// ---------------------------------------------------------------------------
// Canonical parallel loops
// ---------------------------------------------------------------------------

// Finish over For over Async (or the bare For an earlier pass leaves behind),
// stride one, invariant bounds, loop variable untouched by the body.
struct CanonicalLoop {
  StmtPtr finishNode;  // null when the finish was already eliminated
  StmtPtr forNode;
  StmtPtr asyncNode;
  std::string var;
  ExprPtr lo;
  ExprPtr bound;
  std::vector<std::string> clocks;
  std::vector<StmtPtr> segments;  // body split at top-level advanceAll
  bool clocked() const { return !clocks.empty(); }
};

struct LoopResult {
  StmtPtr stmt;
  std::string whyNot;  // NotCanonical reason when stmt is null
  bool ok() const { return stmt != nullptr; }
};

namespace dlbc_detail {

inline bool expr_vars_disjoint(const ExprPtr& e,
                               const std::set<std::string>& banned) {
  if (!e) return true;
  if ((e->kind == ExprKind::Var || e->kind == ExprKind::ArrayRead) &&
      banned.count(e->name))
    return false;
  return expr_vars_disjoint(e->lhs, banned) && expr_vars_disjoint(e->rhs, banned);
}

// Barrier the segment's own task would hit below the top level; advanceAll
// inside a nested clocked async belongs to that task, not this one.
inline bool barrier_below(const StmtPtr& s) {
  if (!s || s->kind == StmtKind::Async) return false;
  if (s->kind == StmtKind::AdvanceAll) return true;
  for (const auto& c : s->stmts)
    if (barrier_below(c)) return true;
  for (const auto& cs : s->cases)
    if (barrier_below(cs.body)) return true;
  return barrier_below(s->init) || barrier_below(s->step) ||
         barrier_below(s->body) || barrier_below(s->elseBody);
}

inline std::optional<std::string> split_segments(const StmtPtr& body,
                                                 std::vector<StmtPtr>* out) {
  // Top-level advanceAll statements separate the segments; any deeper
  // barrier is not chunkable.
  std::vector<StmtPtr> items;
  if (body->kind == StmtKind::Seq)
    items = body->stmts;
  else
    items.push_back(body);
  std::vector<StmtPtr> cur;
  for (const auto& s : items) {
    if (s->kind == StmtKind::AdvanceAll) {
      out->push_back(mk::seq(cur));
      cur.clear();
      continue;
    }
    if (barrier_below(s)) return "barrier nested below the segment level";
    cur.push_back(s);
  }
  out->push_back(mk::seq(cur));
  return std::nullopt;
}

}  // namespace dlbc_detail

inline std::optional<CanonicalLoop> match_canonical_loop(
    const StmtPtr& s, const Analysis& facts, std::string* whyNot = nullptr) {
  auto fail = [&](const char* why) -> std::optional<CanonicalLoop> {
    if (whyNot) *whyNot = why;
    return std::nullopt;
  };
  CanonicalLoop c;
  StmtPtr loop = s;
  if (s->kind == StmtKind::Finish) {
    c.finishNode = s;
    loop = s->body;
  }
  if (!loop || loop->kind != StmtKind::For) return fail("not a for loop");
  c.forNode = loop;
  if (!loop->init || loop->init->kind != StmtKind::Assign || loop->init->lhsIndex)
    return fail("init is not a scalar assignment");
  c.var = loop->init->lhsName;
  c.lo = loop->init->expr;
  if (!loop->expr || loop->expr->kind != ExprKind::Binary ||
      loop->expr->bop != BinOp::Lt || loop->expr->lhs->kind != ExprKind::Var ||
      loop->expr->lhs->name != c.var)
    return fail("condition is not var < bound");
  c.bound = loop->expr->rhs;
  const StmtPtr& st = loop->step;
  bool strideOne = st && st->kind == StmtKind::Assign && !st->lhsIndex &&
                   st->lhsName == c.var && st->expr->kind == ExprKind::Binary &&
                   st->expr->bop == BinOp::Add &&
                   st->expr->lhs->kind == ExprKind::Var &&
                   st->expr->lhs->name == c.var &&
                   st->expr->rhs->kind == ExprKind::IntLit &&
                   st->expr->rhs->intVal == 1;
  if (!strideOne) return fail("step is not var = var + 1");
  if (!loop->body || loop->body->kind != StmtKind::Async)
    return fail("body is not a single async");
  c.asyncNode = loop->body;
  c.clocks = c.asyncNode->clocks;

  RwSet bodyRw = facts.rw_of(c.asyncNode->body);
  if (bodyRw.writes.count(c.var))
    return fail("body writes the loop variable");
  std::set<std::string> banned = bodyRw.writes;
  banned.insert(c.var);
  if (!dlbc_detail::expr_vars_disjoint(c.bound, banned) ||
      !dlbc_detail::expr_vars_disjoint(c.lo, banned))
    return fail("loop bounds are not invariant");

  if (c.clocked()) {
    if (auto why = dlbc_detail::split_segments(c.asyncNode->body, &c.segments))
      return fail(why->c_str());
  } else {
    bool hasBarrier = false;
    for_each_stmt(c.asyncNode->body, [&](const StmtPtr& n) {
      if (n->kind == StmtKind::AdvanceAll) hasBarrier = true;
    });
    if (hasBarrier) return fail("unclocked body contains a barrier");
    c.segments.push_back(c.asyncNode->body);
  }
  return c;
}

namespace dlbc_detail {

inline std::string fresh(const char* base) {
  static std::atomic<uint64_t> n{0};
  return std::string(1, kTempPrefix) + base +
         std::to_string(n.fetch_add(1, std::memory_order_relaxed));
}

// for (v = loExpr; v < hiExpr; v = v + 1) { body }
inline StmtPtr serial_for(const std::string& v, ExprPtr lo, ExprPtr hi,
                          StmtPtr body) {
  return mk::for_loop(
      mk::assign(v, std::move(lo)),
      mk::binary(BinOp::Lt, mk::var(v), std::move(hi)),
      mk::assign(v, mk::binary(BinOp::Add, mk::var(v), mk::int_lit(1))),
      std::move(body));
}

// The chunk's serial loops, one per phase segment, with advanceAll between.
inline StmtPtr phase_loops(const CanonicalLoop& c, ExprPtr lo, ExprPtr hi) {
  std::vector<StmtPtr> out;
  for (size_t k = 0; k < c.segments.size(); ++k) {
    if (k) out.push_back(mk::advance_all());
    out.push_back(serial_for(c.var, lo, hi, c.segments[k]));
  }
  return mk::seq(std::move(out));
}

// Same, wrapped in the phase switch for re-entry after serial progress.
inline StmtPtr phase_switch(const CanonicalLoop& c, const std::string& phaseVar,
                            ExprPtr lo, ExprPtr hi) {
  std::vector<SwitchCase> cases;
  for (size_t k = 0; k < c.segments.size(); ++k) {
    std::vector<StmtPtr> body{serial_for(c.var, lo, hi, c.segments[k])};
    if (k + 1 < c.segments.size()) body.push_back(mk::advance_all());
    cases.push_back({static_cast<long long>(k), false, mk::seq(std::move(body))});
  }
  return mk::switch_stmt(mk::var(phaseVar), std::move(cases));
}

}  // namespace dlbc_detail

// Static chunking: nChunks from the worker-count builtin, ceiling-divided
// chunk size, one task per chunk running its range serially (per phase for
// clocked loops).
inline LoopResult lc_chunk(const StmtPtr& loop, const Analysis& facts) {
  using namespace dlbc_detail;
  std::string why;
  auto canon = match_canonical_loop(loop, facts, &why);
  if (!canon) return {nullptr, why};
  const CanonicalLoop& c = *canon;

  std::string nChunks = fresh("nChunks");
  std::string chunkSize = fresh("chunkSize");
  std::string ii = fresh("ii");
  std::string ni = fresh("ni");
  std::string kx = fresh("kx");

  ExprPtr count =
      (c.lo->kind == ExprKind::IntLit && c.lo->intVal == 0)
          ? c.bound
          : mk::binary(BinOp::Sub, c.bound, c.lo);
  std::vector<StmtPtr> asyncBody{
      mk::assign(kx, mk::binary(BinOp::Add, mk::var(ni), mk::var(chunkSize))),
      mk::if_stmt(mk::binary(BinOp::Gt, mk::var(kx), c.bound),
                  mk::assign(kx, c.bound)),
      phase_loops(c, mk::var(ni), mk::var(kx))};
  StmtPtr spawn = mk::seq(
      {mk::assign(ni, mk::var(ii)),
       mk::async(mk::seq(std::move(asyncBody)), c.clocks)});
  StmtPtr forLoop = mk::for_loop(
      mk::assign(ii, c.lo),
      mk::binary(BinOp::Lt, mk::var(ii), c.bound),
      mk::assign(ii, mk::binary(BinOp::Add, mk::var(ii), mk::var(chunkSize))),
      spawn);

  std::vector<StmtPtr> out{
      mk::assign(nChunks, mk::builtin(builtin_nthreads())),
      mk::assign(chunkSize,
                 mk::binary(BinOp::Div,
                            mk::binary(BinOp::Sub,
                                       mk::binary(BinOp::Add, count,
                                                  mk::var(nChunks)),
                                       mk::int_lit(1)),
                            mk::var(nChunks)))};
  if (c.finishNode)
    out.push_back(mk::finish(forLoop, c.finishNode->pending,
                             c.finishNode->synthetic));
  else
    out.push_back(forLoop);
  return {mk::seq(std::move(out)), ""};
}

// The dynamic template: read the idle count; with idle workers, partition the
// remaining range across them plus the current worker under one join;
// otherwise run serially, re-reading the count each iteration (each barrier
// for clocked loops) and re-entering the parallel path when workers appear
// and at least two iterations remain.
inline LoopResult gen_dlbc(const StmtPtr& loop, bool clocked,
                           const Analysis& facts) {
  using namespace dlbc_detail;
  std::string why;
  auto canon = match_canonical_loop(loop, facts, &why);
  if (!canon) return {nullptr, why};
  const CanonicalLoop& c = *canon;
  if (c.clocked() != clocked) return {nullptr, "clockedness mismatch"};

  std::string w = fresh("workers");
  std::string again = fresh("again");
  std::string ii = fresh("ii");
  std::string tw = fresh("totWorkers");
  std::string an = fresh("actualn");
  std::string eq = fresh("eqChunk");
  std::string nn = fresh("newN");
  std::string rem = fresh("rem");
  std::string kx = fresh("kx");
  std::string ni = fresh("ni");
  std::string ph = fresh("phase");

  auto readIdle = [&] { return mk::assign(w, mk::builtin(builtin_idle_workers())); };

  // Chunked block: spawn one task per computed range, consuming [ii, newN).
  StmtPtr chunkedBody = mk::seq(
      {mk::assign(kx, mk::binary(BinOp::Add,
                                 mk::binary(BinOp::Add, mk::var(ii), mk::var(eq)),
                                 mk::binary(BinOp::Div, mk::var(rem), mk::var(tw)))),
       mk::assign(ni, mk::var(ii)),
       mk::assign(rem, mk::binary(BinOp::Sub, mk::var(rem), mk::int_lit(1))),
       mk::assign(ii, mk::var(kx)),
       mk::async(clocked ? mk::seq({phase_switch(c, ph, mk::var(ni), mk::var(kx))})
                         : phase_loops(c, mk::var(ni), mk::var(kx)),
                 c.clocks)});
  StmtPtr chunkedLoop = mk::for_loop(
      nullptr, mk::binary(BinOp::Lt, mk::var(ii), mk::var(nn)), nullptr,
      chunkedBody);

  StmtPtr parentBlock =
      clocked ? phase_switch(c, ph, mk::var(nn), c.bound)
              : serial_for(c.var, mk::var(nn), c.bound, c.segments[0]);

  bool synthetic = c.finishNode == nullptr;
  std::vector<std::string> pend =
      c.finishNode ? c.finishNode->pending : std::vector<std::string>{};
  StmtPtr joined = mk::finish(mk::seq({chunkedLoop, parentBlock}), pend, synthetic);

  StmtPtr parallelArm = mk::seq(
      {mk::assign(tw, mk::binary(BinOp::Add, mk::var(w), mk::int_lit(1))),
       mk::assign(an, mk::binary(BinOp::Sub, c.bound, mk::var(ii))),
       mk::assign(eq, mk::binary(BinOp::Div, mk::var(an), mk::var(tw))),
       mk::assign(nn, mk::binary(BinOp::Add, mk::var(ii),
                                 mk::binary(BinOp::Sub, mk::var(an), mk::var(eq)))),
       mk::assign(rem, mk::binary(BinOp::Add,
                                  mk::binary(BinOp::Mod, mk::var(an), mk::var(tw)),
                                  mk::var(w))),
       joined});

  StmtPtr serialArm;
  if (!clocked) {
    // Run from ii, re-reading the idle count after each iteration; hand the
    // rest back to the parallel arm when workers appear and at least two
    // iterations remain.
    std::string go = fresh("go");
    StmtPtr reenter = mk::if_stmt(
        mk::binary(BinOp::And,
                   mk::binary(BinOp::Gt, mk::var(w), mk::int_lit(0)),
                   mk::binary(BinOp::Lt, mk::var(c.var),
                              mk::binary(BinOp::Sub, c.bound, mk::int_lit(2)))),
        mk::seq({mk::assign(ii, mk::binary(BinOp::Add, mk::var(c.var),
                                           mk::int_lit(1))),
                 mk::assign(again, mk::bool_lit(true)),
                 mk::assign(go, mk::bool_lit(false))}));
    StmtPtr body = mk::seq(
        {c.segments[0], readIdle(), reenter,
         mk::assign(c.var, mk::binary(BinOp::Add, mk::var(c.var), mk::int_lit(1)))});
    serialArm = mk::seq(
        {mk::assign(c.var, mk::var(ii)), mk::assign(go, mk::bool_lit(true)),
         mk::while_loop(
             mk::binary(BinOp::And, mk::var(go),
                        mk::binary(BinOp::Lt, mk::var(c.var), c.bound)),
             body)});
  } else {
    // Full index range per phase; check for workers only at the barriers,
    // stepping the phase before re-entering the parallel arm.
    StmtPtr armK;  // built innermost-first
    for (size_t k = c.segments.size(); k-- > 0;) {
      StmtPtr loopK = serial_for(c.var, c.lo, c.bound, c.segments[k]);
      if (k + 1 == c.segments.size()) {
        armK = loopK;
        continue;
      }
      StmtPtr check = mk::if_stmt(
          mk::binary(BinOp::Gt, mk::var(w), mk::int_lit(0)),
          mk::seq({mk::assign(ph, mk::int_lit(static_cast<long long>(k + 1))),
                   mk::assign(again, mk::bool_lit(true))}),
          armK);
      armK = mk::seq({loopK, mk::advance_all(), readIdle(), check});
    }
    serialArm = armK;
  }

  std::vector<StmtPtr> out{mk::assign(ii, c.lo)};
  if (clocked) out.push_back(mk::assign(ph, mk::int_lit(0)));
  out.push_back(readIdle());
  out.push_back(mk::assign(again, mk::bool_lit(true)));
  out.push_back(mk::while_loop(
      mk::var(again),
      mk::seq({mk::assign(again, mk::bool_lit(false)),
               mk::if_stmt(mk::binary(BinOp::Gt, mk::var(w), mk::int_lit(0)),
                           parallelArm, serialArm)})));
  return {mk::seq(std::move(out)), ""};
}

// ---------------------------------------------------------------------------
// Whole-program application
// ---------------------------------------------------------------------------

enum class ChunkKind { Static, Dynamic };

// Rewrites every canonical parallel loop, innermost first. A Finish directly
// over a For is consumed as one unit so the template can reuse the join. In
// exceptions mode loops whose tasks can raise are left alone: grouping
// iterations into one task would let a single failure cancel iterations that
// were independent tasks before.
inline Program chunk_loops(const Program& input, ChunkKind kind,
                           bool exceptions) {
  Program p = input;
  Analysis facts(p);
  for (auto& m : p.methods) {
    auto rewrite = [&](const StmtPtr& s, auto&& self) -> StmtPtr {
      if (!s) return s;

      // Canonical loop (with or without its finish): transform nested loops
      // inside the task body first, then the loop itself.
      if (s->kind == StmtKind::Finish || s->kind == StmtKind::For) {
        std::string why;
        if (auto canon = match_canonical_loop(s, facts, &why)) {
          StmtPtr newTaskBody = self(canon->asyncNode->body, self);
          StmtPtr newAsync = mk::async(newTaskBody, canon->clocks);
          StmtPtr newFor =
              mk::for_loop(canon->forNode->init, canon->forNode->expr,
                           canon->forNode->step, newAsync);
          StmtPtr rebuilt =
              canon->finishNode
                  ? mk::finish(newFor, canon->finishNode->pending,
                               canon->finishNode->synthetic)
                  : newFor;
          if (exceptions && facts.may_throw(newTaskBody)) return rebuilt;
          LoopResult r = kind == ChunkKind::Static
                             ? lc_chunk(rebuilt, facts)
                             : gen_dlbc(rebuilt, canon->clocked(), facts);
          return r.ok() ? r.stmt : rebuilt;
        }
      }

      auto copy = std::make_shared<Stmt>(*s);
      copy->id = next_node_id();
      for (auto& ch : copy->stmts) ch = self(ch, self);
      copy->init = self(copy->init, self);
      copy->step = self(copy->step, self);
      copy->body = self(copy->body, self);
      copy->elseBody = self(copy->elseBody, self);
      for (auto& cs : copy->cases) cs.body = self(cs.body, self);
      return copy->kind == StmtKind::Seq ? mk::seq(copy->stmts)
                                         : StmtPtr(copy);
    };
    m.body = rewrite(m.body, rewrite);
  }
  return p;
}

}  // namespace finch
