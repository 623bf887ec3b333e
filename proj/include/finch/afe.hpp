// Aggressive Finish Elimination: the mini-transformations, their
// exception-preserving variants, the leaf-up driver with all-or-nothing
// rollback per method, and the final lowering of pending-exception lists.
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "finch/analysis.hpp"
#include "finch/ast.hpp"

namespace finch {

enum class RuleId {
  LoopFinishInterchange,
  FinishFusion,
  TailFinishElim,
  FinishIfInterchange,
  FinishExpandUpper,
  FinishExpandLower,
  AsyncFinishInterchange,
  FinishMethodPull,
  TryFinishExchange,  // exceptions mode only
  LowerPending,
};

inline const char* rule_name(RuleId r) {
  switch (r) {
    case RuleId::LoopFinishInterchange: return "LoopFinishInterchange";
    case RuleId::FinishFusion: return "FinishFusion";
    case RuleId::TailFinishElim: return "TailFinishElim";
    case RuleId::FinishIfInterchange: return "FinishIfInterchange";
    case RuleId::FinishExpandUpper: return "FinishExpandUpper";
    case RuleId::FinishExpandLower: return "FinishExpandLower";
    case RuleId::AsyncFinishInterchange: return "AsyncFinishInterchange";
    case RuleId::FinishMethodPull: return "FinishMethodPull";
    case RuleId::TryFinishExchange: return "TryFinishExchange";
    case RuleId::LowerPending: return "LowerPending";
  }
  return "?";
}

enum class AfeMode { Plain, Exceptions };

struct RuleFiring {
  RuleId rule{};
  std::string method;
  uint64_t siteId = 0;
};

struct AfeReport {
  std::vector<RuleFiring> firings;
  std::vector<std::string> rollbacks;  // methods restored from snapshot
  std::vector<std::string> pulls;      // methods whose finish moved to callers
  bool capHit = false;
  // Program state after every firing; filled only when capture is requested.
  std::vector<Program> checkpoints;
};

// Per-method processing state of the driver.
struct AfeState {
  std::set<std::string> processed;
  std::set<std::string> pulled;
  std::map<std::string, StmtPtr> snapshots;
  AfeMode mode = AfeMode::Plain;
};

struct RuleResult {
  StmtPtr stmt;        // null when inapplicable
  std::string whyNot;  // failed precondition, for reporting
  bool applied() const { return stmt != nullptr; }
};

namespace afe_detail {

inline std::string fresh_temp(const char* base) {
  static std::atomic<uint64_t> counter{0};
  return std::string(1, kTempPrefix) + base +
         std::to_string(counter.fetch_add(1, std::memory_order_relaxed));
}

inline bool is_finish(const StmtPtr& s) {
  return s && s->kind == StmtKind::Finish;
}

inline bool contains_return(const StmtPtr& s) {
  bool any = false;
  for_each_stmt(s, [&](const StmtPtr& n) {
    if (n->kind == StmtKind::Return) any = true;
  });
  return any;
}

// A barrier the current task would execute: an advanceAll outside any async
// within s.
inline bool contains_task_barrier(const StmtPtr& s) {
  if (!s) return false;
  if (s->kind == StmtKind::AdvanceAll) return true;
  if (s->kind == StmtKind::Async) return false;
  for (const auto& c : s->stmts)
    if (contains_task_barrier(c)) return true;
  for (const auto& cs : s->cases)
    if (contains_task_barrier(cs.body)) return true;
  return contains_task_barrier(s->init) || contains_task_barrier(s->step) ||
         contains_task_barrier(s->body) || contains_task_barrier(s->elseBody);
}

// Null-initialisation of a pending variable; ExpandUpper must not swallow
// these or the exception machinery regresses endlessly.
inline bool is_pending_init(const StmtPtr& s) {
  return s && s->kind == StmtKind::Assign && !s->lhsIndex &&
         is_temp_name(s->lhsName) && s->expr->kind == ExprKind::NullLit;
}

inline bool any_async_throws(const EAsyncSet& e) {
  for (const auto& a : e.asyncs)
    if (a.mayThrow) return true;
  return false;
}

// exlist as statements: one `if (v != null) throw v;` per entry, in order.
inline std::vector<StmtPtr> pending_stmts(const std::vector<std::string>& pend) {
  std::vector<StmtPtr> out;
  for (const auto& v : pend)
    out.push_back(mk::if_stmt(mk::binary(BinOp::Ne, mk::var(v), mk::null_lit()),
                              mk::throw_stmt(mk::var(v))));
  return out;
}

inline StmtPtr null_init(const std::string& v) {
  return mk::assign(v, mk::null_lit());
}

// try { s } catch (var: Exception) { sink = var; }
inline StmtPtr catch_into(StmtPtr s, const std::string& sink) {
  std::string cv = fresh_temp("c");
  return mk::try_catch(std::move(s), cv, kCatchAll,
                       mk::assign(sink, mk::var(cv)));
}

inline ExprPtr is_null(const std::string& v) {
  return mk::binary(BinOp::Eq, mk::var(v), mk::null_lit());
}
inline ExprPtr not_null(const std::string& v) {
  return mk::binary(BinOp::Ne, mk::var(v), mk::null_lit());
}

// ---------------------------------------------------------------------------
// Individual rules. Each returns the replacement tree or a failed
// precondition.
// ---------------------------------------------------------------------------

// finish{S1} finish{S2}  =>  finish{S1; S2}     (site: the Seq node)
inline RuleResult fusion(const StmtPtr& seqNode, const Analysis& facts,
                         AfeMode mode) {
  if (seqNode->kind != StmtKind::Seq) return {nullptr, "not a sequence"};
  std::string lastWhy = "no adjacent finish pair";
  for (size_t i = 0; i + 1 < seqNode->stmts.size(); ++i) {
    const StmtPtr& f1 = seqNode->stmts[i];
    const StmtPtr& f2 = seqNode->stmts[i + 1];
    if (!is_finish(f1) || !is_finish(f2)) continue;
    EAsyncSet e1 = facts.escaping_asyncs(f1->body);
    if (depends(f2->body, e1, facts)) {
      lastWhy = "S2 depends on e-async of S1";
      continue;
    }
    if (mode == AfeMode::Exceptions) {
      if (any_async_throws(e1) ||
          any_async_throws(facts.escaping_asyncs(f2->body))) {
        lastWhy = "e-asyncs may throw";
        continue;
      }
    } else if (!f1->pending.empty() || !f2->pending.empty()) {
      lastWhy = "pending lists outside exceptions mode";
      continue;
    }
    std::vector<StmtPtr> fusedBody{f1->body};
    for (auto& st : pending_stmts(f1->pending)) fusedBody.push_back(st);
    fusedBody.push_back(f2->body);
    StmtPtr fused = mk::finish(mk::seq(std::move(fusedBody)), f2->pending);
    std::vector<StmtPtr> items(seqNode->stmts.begin(), seqNode->stmts.end());
    items[i] = fused;
    items.erase(items.begin() + static_cast<long>(i) + 1);
    return {mk::seq(std::move(items)), ""};
  }
  return {nullptr, lastWhy};
}

// if(c){finish S1}            => [v=c;] finish{if(v) S1}
// if(c){finish S1}else{finish S2} likewise with both arms
inline RuleResult finish_if(const StmtPtr& ifNode, const Analysis& facts,
                            AfeMode mode) {
  if (ifNode->kind != StmtKind::If) return {nullptr, "not an if"};
  const bool thenFin = is_finish(ifNode->body);
  const bool elseFin = is_finish(ifNode->elseBody);
  if (!thenFin) return {nullptr, "then-branch is not a finish"};
  if (ifNode->elseBody && !elseFin)
    return {nullptr, "else-branch is not a finish"};

  // Hoist the condition when it must stay outside the scope: always in
  // exceptions mode, otherwise only when it reads runtime state.
  bool hoist =
      mode == AfeMode::Exceptions || facts.contains_builtin(ifNode->expr);
  ExprPtr cond = ifNode->expr;
  std::vector<StmtPtr> out;
  if (hoist) {
    std::string v = fresh_temp("v");
    out.push_back(mk::assign(v, ifNode->expr));
    cond = mk::var(v);
  }
  if (!ifNode->elseBody) {
    const auto& fin = ifNode->body;
    std::vector<std::string> pend = fin->pending;
    for (const auto& v : pend) out.insert(out.begin(), null_init(v));
    out.push_back(mk::finish(mk::if_stmt(cond, fin->body), pend));
    return {mk::seq(std::move(out)), ""};
  }
  const auto& ft = ifNode->body;
  const auto& fe = ifNode->elseBody;
  std::vector<std::string> pend = ft->pending;
  pend.insert(pend.end(), fe->pending.begin(), fe->pending.end());
  // The untaken branch's entries must read as absent.
  for (const auto& v : pend) out.insert(out.begin(), null_init(v));
  out.push_back(mk::finish(mk::if_stmt(cond, ft->body, fe->body), pend));
  return {mk::seq(std::move(out)), ""};
}

// async {finish S1}  =>  finish{async S1}
inline RuleResult async_finish(const StmtPtr& asyncNode, const Analysis& facts,
                               AfeMode mode) {
  if (asyncNode->kind != StmtKind::Async) return {nullptr, "not an async"};
  if (!is_finish(asyncNode->body)) return {nullptr, "body is not a finish"};
  const StmtPtr& fin = asyncNode->body;
  if (mode == AfeMode::Exceptions) {
    if (!fin->pending.empty()) return {nullptr, "inner finish has pending list"};
    if (facts.may_throw(fin->body)) return {nullptr, "S1 may throw"};
  } else if (!fin->pending.empty()) {
    return {nullptr, "pending list outside exceptions mode"};
  }
  return {mk::finish(mk::async(fin->body, asyncNode->clocks)), ""};
}

// S1; finish{S2}  =>  finish{S1; S2}     (site: the Seq node)
inline RuleResult expand_upper(const StmtPtr& seqNode, const Analysis& facts,
                               AfeMode mode) {
  if (seqNode->kind != StmtKind::Seq) return {nullptr, "not a sequence"};
  std::string lastWhy = "no (statement, finish) pair";
  for (size_t i = 0; i + 1 < seqNode->stmts.size(); ++i) {
    const StmtPtr& s1 = seqNode->stmts[i];
    const StmtPtr& fin = seqNode->stmts[i + 1];
    if (!is_finish(fin)) continue;
    if (is_pending_init(s1)) {
      lastWhy = "S1 initialises a pending variable";
      continue;
    }
    if (contains_return(s1)) {
      lastWhy = "S1 contains a return";
      continue;
    }
    EAsyncSet e1 = facts.escaping_asyncs(s1);
    if (registered_on_clocks(e1)) {
      lastWhy = "S1 has e-asyncs registered on clocks";
      continue;
    }
    if (mode == AfeMode::Exceptions && any_async_throws(e1)) {
      lastWhy = "e-asyncs in S1 may throw";
      continue;
    }
    std::vector<StmtPtr> items(seqNode->stmts.begin(), seqNode->stmts.end());
    if (mode == AfeMode::Plain) {
      items[i] = mk::finish(mk::seq({s1, fin->body}), fin->pending);
    } else {
      std::string e = fresh_temp("e");
      StmtPtr guarded = mk::seq(
          {catch_into(s1, e),
           mk::if_stmt(is_null(e), fin->body)});
      std::vector<std::string> pend{e};
      pend.insert(pend.end(), fin->pending.begin(), fin->pending.end());
      items[i] = mk::finish(std::move(guarded), std::move(pend));
      items.insert(items.begin() + static_cast<long>(i), null_init(e));
      ++i;
    }
    items.erase(items.begin() + static_cast<long>(i) + 1);
    return {mk::seq(std::move(items)), ""};
  }
  return {nullptr, lastWhy};
}

// finish{S1}; S2  =>  finish{S1; S2}     (site: the Seq node)
inline RuleResult expand_lower(const StmtPtr& seqNode, const Analysis& facts,
                               AfeMode mode) {
  if (seqNode->kind != StmtKind::Seq) return {nullptr, "not a sequence"};
  std::string lastWhy = "no (finish, statement) pair";
  for (size_t i = 0; i + 1 < seqNode->stmts.size(); ++i) {
    const StmtPtr& fin = seqNode->stmts[i];
    const StmtPtr& s2 = seqNode->stmts[i + 1];
    if (!is_finish(fin) || is_finish(s2)) continue;
    EAsyncSet e1 = facts.escaping_asyncs(fin->body);
    if (depends(s2, e1, facts)) {
      lastWhy = "S2 depends on e-async of S1";
      continue;
    }
    if (contains_task_barrier(s2)) {
      lastWhy = "S2 is a barrier";
      continue;
    }
    if (registered_on_clocks(facts.escaping_asyncs(s2))) {
      lastWhy = "S2 has e-asyncs registered on clocks";
      continue;
    }
    if (contains_return(s2)) {
      lastWhy = "S2 contains a return";
      continue;
    }
    if (mode == AfeMode::Exceptions &&
        (any_async_throws(e1) || any_async_throws(facts.escaping_asyncs(s2)))) {
      lastWhy = "e-asyncs may throw";
      continue;
    }
    std::vector<StmtPtr> items(seqNode->stmts.begin(), seqNode->stmts.end());
    if (mode == AfeMode::Plain) {
      items[i] = mk::finish(mk::seq({fin->body, s2}), fin->pending);
    } else {
      std::string e = fresh_temp("e");
      std::vector<StmtPtr> body{fin->body};
      if (!fin->pending.empty()) {
        body.push_back(catch_into(mk::seq(pending_stmts(fin->pending)), e));
        body.push_back(mk::if_stmt(is_null(e), catch_into(s2, e)));
      } else {
        body.push_back(catch_into(s2, e));
      }
      items[i] = mk::finish(mk::seq(std::move(body)),
                            std::vector<std::string>{e});
      items.insert(items.begin() + static_cast<long>(i), null_init(e));
      ++i;
    }
    items.erase(items.begin() + static_cast<long>(i) + 1);
    return {mk::seq(std::move(items)), ""};
  }
  return {nullptr, lastWhy};
}

// for(S1;c;S2){finish S3}  =>  S1; finish{for(;c;S2){S3}}
// while(c){finish S3}      =>  finish{while(c){S3}}
inline RuleResult loop_finish(const StmtPtr& loop, const Analysis& facts,
                              AfeMode mode) {
  const bool isFor = loop->kind == StmtKind::For;
  const bool isWhile = loop->kind == StmtKind::While;
  if (!isFor && !isWhile) return {nullptr, "not a loop"};
  if (!is_finish(loop->body)) return {nullptr, "loop body is not a finish"};
  const StmtPtr& fin = loop->body;
  if (mode == AfeMode::Plain && !fin->pending.empty())
    return {nullptr, "pending list outside exceptions mode"};

  EAsyncSet E = facts.escaping_asyncs(fin->body);
  RwSet we, re;
  for (const auto& a : E.asyncs) {
    we.writes.insert(a.rw.writes.begin(), a.rw.writes.end());
    re.reads.insert(a.rw.reads.begin(), a.rw.reads.end());
  }

  // Clocked tasks from different iterations must not share a barrier scope.
  if (registered_on_clocks(E))
    return {nullptr, "e-asyncs registered on clocks"};

  RwSet condRw;
  {
    StmtPtr probe = mk::if_stmt(loop->expr, mk::skip());
    condRw = facts.rw_of(probe);
  }
  if (RwSet::intersects(condRw.reads, we.writes))
    return {nullptr, "cond depends on e-async"};

  RwSet stepRw = isFor ? facts.rw_of(loop->step) : RwSet{};
  RwSet serialRw = facts.rw_of_serial(fin->body);

  // Induction variable: written only by init/step, read-only elsewhere; its
  // value is pinned into each task at spawn.
  std::set<std::string> inductionOk;
  if (isFor && loop->step && loop->step->kind == StmtKind::Assign &&
      !loop->step->lhsIndex) {
    const std::string& v = loop->step->lhsName;
    if (!we.writes.count(v) && !serialRw.writes.count(v)) inductionOk.insert(v);
  }
  auto minus = [](std::set<std::string> s, const std::set<std::string>& drop) {
    for (const auto& d : drop) s.erase(d);
    return s;
  };

  if (RwSet::intersects(we.writes, stepRw.reads) ||
      RwSet::intersects(we.writes, stepRw.writes) ||
      RwSet::intersects(we.writes, serialRw.reads) ||
      RwSet::intersects(we.writes, serialRw.writes) ||
      RwSet::intersects(we.writes, condRw.reads))
    return {nullptr, "e-async writes feed the loop"};
  if (RwSet::intersects(minus(re.reads, inductionOk), stepRw.writes) ||
      RwSet::intersects(re.reads, serialRw.writes))
    return {nullptr, "loop writes feed the e-asyncs"};
  if (RwSet::intersects(we.writes, re.reads))
    return {nullptr, "e-asyncs exchange data across iterations"};

  if (mode == AfeMode::Exceptions && any_async_throws(E))
    return {nullptr, "e-asyncs may throw"};

  if (mode == AfeMode::Plain) {
    StmtPtr newLoop =
        isFor ? mk::for_loop(nullptr, loop->expr, loop->step, fin->body)
              : mk::while_loop(loop->expr, fin->body);
    StmtPtr newFin = mk::finish(std::move(newLoop), fin->pending);
    if (isFor && loop->init) return {mk::seq({loop->init, newFin}), ""};
    return {newFin, ""};
  }

  // Exceptions mode: run every iteration under the one finish, catching each
  // stage so a failure stops the loop and re-raises after the join.
  std::string e = fresh_temp("e");
  std::string me = fresh_temp("me");
  std::string v = fresh_temp("v");
  std::string done = fresh_temp("done");

  // catch_into with an extra done flag; built per stage.
  auto catchStop = [&](StmtPtr body, const std::string& sink,
                       bool wrapMulti) {
    std::string cv = fresh_temp("c");
    StmtPtr handler = mk::seq(
        {mk::assign(sink, wrapMulti
                              ? mk::new_multi(mk::var(cv))
                              : ExprPtr(mk::var(cv))),
         mk::assign(done, mk::bool_lit(true))});
    return mk::try_catch(std::move(body), cv, kCatchAll, std::move(handler));
  };

  std::vector<StmtPtr> iter;
  iter.push_back(catchStop(mk::assign(v, loop->expr), e, false));
  StmtPtr runBody = catchStop(fin->body, me, true);
  std::vector<StmtPtr> afterBody;
  if (!fin->pending.empty()) {
    afterBody.push_back(catchStop(mk::seq(pending_stmts(fin->pending)), e, false));
  }
  StmtPtr stepPart;
  if (isFor && loop->step) stepPart = catchStop(loop->step, e, false);
  StmtPtr inner = mk::seq(
      {runBody,
       mk::if_stmt(is_null(me),
                   mk::seq({mk::seq(afterBody),
                            mk::if_stmt(is_null(e),
                                        stepPart ? stepPart : mk::skip())}))});
  iter.push_back(mk::if_stmt(
      mk::unary(UnOp::Not, mk::var(done)),
      mk::if_stmt(mk::var(v), inner,
                  mk::assign(done, mk::bool_lit(true)))));

  StmtPtr loopStmt = mk::while_loop(mk::unary(UnOp::Not, mk::var(done)),
                                    mk::seq(std::move(iter)));
  std::vector<StmtPtr> out;
  if (isFor && loop->init) out.push_back(loop->init);
  out.push_back(null_init(e));
  out.push_back(null_init(me));
  out.push_back(mk::assign(v, mk::bool_lit(false)));
  out.push_back(mk::assign(done, mk::bool_lit(false)));
  out.push_back(mk::finish(std::move(loopStmt),
                           std::vector<std::string>{e, me}));
  return {mk::seq(std::move(out)), ""};
}

// finish{finish{S1}}  =>  finish{S1}   (plain)
// exceptions: try{finish{S1}; exlist1} catch(e:Exception){throw new ME(e);}
//             followed by exlist2 as statements
inline RuleResult tail_finish(const StmtPtr& outer, const Analysis&,
                              AfeMode mode) {
  if (!is_finish(outer)) return {nullptr, "not a finish"};
  if (!is_finish(outer->body)) return {nullptr, "body is not a finish"};
  const StmtPtr& inner = outer->body;
  if (mode == AfeMode::Plain) {
    if (!outer->pending.empty() || !inner->pending.empty())
      return {nullptr, "pending list outside exceptions mode"};
    return {mk::finish(inner->body), ""};
  }
  std::vector<StmtPtr> tryBody{mk::finish(inner->body)};
  for (auto& s : pending_stmts(inner->pending)) tryBody.push_back(s);
  std::string cv = fresh_temp("c");
  std::string mev = fresh_temp("me");
  StmtPtr handler = mk::seq({mk::assign(mev, mk::new_multi(mk::var(cv))),
                             mk::throw_stmt(mk::var(mev))});
  std::vector<StmtPtr> out{
      mk::try_catch(mk::seq(std::move(tryBody)), cv, kCatchAll, handler)};
  for (auto& s : pending_stmts(outer->pending)) out.push_back(s);
  return {mk::seq(std::move(out)), ""};
}

// try{finish{S1}<exlist>} catch(ev:Exception){S2}
//   => ev=null; finish{ try{ try{S1}catch(c){throw new ME(c);} exlist }
//                       catch(c2:Exception){ ev=c2; } }
//      if (ev != null) { S2 }
inline RuleResult try_finish_exchange(const StmtPtr& tryNode,
                                      const Analysis& facts, AfeMode mode) {
  if (mode != AfeMode::Exceptions)
    return {nullptr, "exceptions mode only"};
  if (tryNode->kind != StmtKind::TryCatch) return {nullptr, "not a try"};
  if (!is_finish(tryNode->body)) return {nullptr, "try body is not a finish"};
  if (tryNode->catchTag != kCatchAll)
    return {nullptr, "handler is not a catch-all"};
  const StmtPtr& fin = tryNode->body;
  EAsyncSet e1 = facts.escaping_asyncs(fin->body);
  if (any_async_throws(e1)) return {nullptr, "e-asyncs in S1 may throw"};

  const std::string& ev = tryNode->catchVar;
  std::string c1 = fresh_temp("c");
  StmtPtr innerTry = mk::try_catch(
      fin->body, c1, kCatchAll,
      mk::throw_stmt(mk::new_multi(mk::var(c1))));
  std::vector<StmtPtr> guarded{innerTry};
  for (auto& s : pending_stmts(fin->pending)) guarded.push_back(s);
  StmtPtr outerTry = catch_into(mk::seq(std::move(guarded)), ev);
  std::vector<StmtPtr> out{
      null_init(ev), mk::finish(std::move(outerTry)),
      mk::if_stmt(not_null(ev), tryNode->elseBody)};
  return {mk::seq(std::move(out)), ""};
}

}  // namespace afe_detail

// Applies one named rule at one site, checking its preconditions against the
// facts; a miss reports the first failed precondition.
inline RuleResult apply_rule(RuleId rule, const StmtPtr& site,
                             const Analysis& facts, AfeMode mode) {
  using namespace afe_detail;
  switch (rule) {
    case RuleId::FinishFusion: return fusion(site, facts, mode);
    case RuleId::FinishIfInterchange: return finish_if(site, facts, mode);
    case RuleId::AsyncFinishInterchange: return async_finish(site, facts, mode);
    case RuleId::FinishExpandUpper: return expand_upper(site, facts, mode);
    case RuleId::FinishExpandLower: return expand_lower(site, facts, mode);
    case RuleId::LoopFinishInterchange: return loop_finish(site, facts, mode);
    case RuleId::TailFinishElim: return tail_finish(site, facts, mode);
    case RuleId::TryFinishExchange:
      return try_finish_exchange(site, facts, mode);
    default:
      return {nullptr, "rule is driver-level"};
  }
}

namespace afe_detail {

// Rules tried at each node, helpers before main rules.
inline const std::vector<RuleId>& node_rules() {
  static const std::vector<RuleId> order{
      RuleId::FinishFusion,       RuleId::FinishIfInterchange,
      RuleId::AsyncFinishInterchange, RuleId::FinishExpandUpper,
      RuleId::FinishExpandLower,  RuleId::LoopFinishInterchange,
      RuleId::TailFinishElim,     RuleId::TryFinishExchange,
  };
  return order;
}

struct Rewrite {
  StmtPtr stmt;
  RuleId rule{};
  uint64_t siteId = 0;
};

// Deepest-first scan: rewrite within children before trying this node, so
// innermost opportunities fire first and the published chain is reproduced.
inline std::optional<Rewrite> rewrite_once(const StmtPtr& s,
                                           const Analysis& facts,
                                           AfeMode mode) {
  if (!s) return std::nullopt;

  auto replaceChild = [&](const StmtPtr& n, StmtPtr newChild,
                          StmtPtr Stmt::*slot) {
    auto copy = std::make_shared<Stmt>(*n);
    copy->id = next_node_id();
    (*copy).*slot = std::move(newChild);
    return StmtPtr(copy);
  };

  if (s->kind == StmtKind::Seq) {
    for (size_t i = 0; i < s->stmts.size(); ++i) {
      if (auto r = rewrite_once(s->stmts[i], facts, mode)) {
        std::vector<StmtPtr> items(s->stmts.begin(), s->stmts.end());
        items[i] = r->stmt;
        r->stmt = mk::seq(std::move(items));
        return r;
      }
    }
  } else {
    for (StmtPtr Stmt::*slot :
         {&Stmt::init, &Stmt::step, &Stmt::body, &Stmt::elseBody}) {
      const StmtPtr& child = (*s).*slot;
      if (!child) continue;
      if (auto r = rewrite_once(child, facts, mode)) {
        r->stmt = replaceChild(s, r->stmt, slot);
        return r;
      }
    }
    if (!s->cases.empty()) {
      for (size_t i = 0; i < s->cases.size(); ++i) {
        if (auto r = rewrite_once(s->cases[i].body, facts, mode)) {
          auto copy = std::make_shared<Stmt>(*s);
          copy->id = next_node_id();
          copy->cases[i].body = r->stmt;
          r->stmt = copy;
          return r;
        }
      }
    }
  }

  for (RuleId rule : node_rules()) {
    if (rule == RuleId::TryFinishExchange && mode != AfeMode::Exceptions)
      continue;
    RuleResult rr = apply_rule(rule, s, facts, mode);
    if (rr.applied()) return Rewrite{rr.stmt, rule, s->id};
  }
  return std::nullopt;
}

// Body shape FinishMethodPull accepts: optional pending-variable
// initialisations followed by exactly one finish.
struct PullShape {
  std::vector<StmtPtr> inits;
  StmtPtr fin;
};

inline std::optional<PullShape> match_pull_shape(const StmtPtr& body) {
  if (is_finish(body)) return PullShape{{}, body};
  if (body->kind != StmtKind::Seq) return std::nullopt;
  PullShape shape;
  for (size_t i = 0; i < body->stmts.size(); ++i) {
    const StmtPtr& st = body->stmts[i];
    if (is_finish(st)) {
      if (i + 1 != body->stmts.size()) return std::nullopt;
      shape.fin = st;
      return shape;
    }
    if (!is_pending_init(st)) return std::nullopt;
    shape.inits.push_back(st);
  }
  return std::nullopt;
}

}  // namespace afe_detail

// Reverse-topological order over the call graph's SCC condensation: callees
// first, entry last, cycles broken by the visited set.
inline std::vector<std::string> afe_method_order(const Program& p) {
  CallGraph g = build_call_graph(p);
  std::map<int, std::vector<std::string>> compMembers;
  for (const auto& m : p.methods) compMembers[g.sccIndex.at(m.name)].push_back(m.name);
  std::map<int, std::set<int>> compSucc;  // component -> callee components
  for (const auto& [from, to] : g.edges) {
    if (!p.find(to)) continue;
    int a = g.sccIndex.at(from), b = g.sccIndex.at(to);
    if (a != b) compSucc[a].insert(b);
  }
  std::vector<std::string> order;
  std::set<int> done;
  // Emit a component once all its callees are emitted.
  while (done.size() < compMembers.size()) {
    bool progress = false;
    for (const auto& [comp, members] : compMembers) {
      if (done.count(comp)) continue;
      bool ready = true;
      for (int succ : compSucc[comp])
        if (!done.count(succ)) ready = false;
      if (!ready) continue;
      for (const auto& m : members) order.push_back(m);
      done.insert(comp);
      progress = true;
    }
    if (!progress) break;  // defensive; the condensation is acyclic
  }
  return order;
}

inline std::pair<Program, AfeReport> run_afe(const Program& input, AfeMode mode,
                                             bool capture = false) {
  using namespace afe_detail;
  Program p = input;
  AfeReport report;
  AfeState state;
  state.mode = mode;
  constexpr int kRuleCap = 512;

  for (const std::string& name : afe_method_order(p)) {
    if (state.processed.count(name)) continue;
    state.processed.insert(name);
    int mi = p.index_of(name);
    if (mi < 0) continue;
    state.snapshots[name] = p.methods[mi].body;

    // In-method fixed point.
    bool fired = false;
    for (int k = 0;; ++k) {
      if (k >= kRuleCap) {
        report.capHit = true;
        break;
      }
      Analysis facts(p);
      auto r = rewrite_once(p.methods[mi].body, facts, mode);
      if (!r) break;
      p.methods[mi].body = r->stmt;
      report.firings.push_back({r->rule, name, r->siteId});
      if (capture) report.checkpoints.push_back(p);
      fired = true;
    }

    if (name == p.entry) continue;  // nothing to pull past the entry

    // Finish-Method Pull, or all-or-nothing rollback.
    Analysis facts(p);
    const CallGraph& g = facts.call_graph();
    auto shape = match_pull_shape(p.methods[mi].body);
    bool pulled = false;
    if (shape && !state.pulled.count(name)) {
      std::vector<uint64_t> sites, recSites;
      for (const auto& [site, callee] : g.siteTarget) {
        if (callee != name) continue;
        if (g.recursiveSites.count(site))
          recSites.push_back(site);
        else
          sites.push_back(site);
      }
      bool throwGuard =
          mode == AfeMode::Exceptions && !recSites.empty() &&
          facts.may_throw(shape->fin->body);
      if (!sites.empty() && !throwGuard) {
        const StmtPtr fin = shape->fin;
        std::string slot;
        std::vector<StmtPtr> newBody = shape->inits;
        newBody.push_back(fin->body);
        if (!fin->pending.empty()) {
          // Export the first pending exception through the method's slot.
          slot = std::string(1, kTempPrefix) + "gex" +
                 std::string(1, kTempPrefix) + name;
          newBody.push_back(mk::assign(slot, mk::null_lit()));
          for (auto it = fin->pending.rbegin(); it != fin->pending.rend(); ++it)
            newBody.push_back(mk::if_stmt(not_null(*it),
                                          mk::assign(slot, mk::var(*it))));
          p.methods[mi].exceptionSlot = slot;
        }
        p.methods[mi].body = mk::seq(std::move(newBody));

        // Wrap every non-recursive call site; recursive sites stay bare.
        for (auto& m : p.methods) {
          std::set<uint64_t> targets(sites.begin(), sites.end());
          auto rewriteSites = [&](const StmtPtr& s, auto&& self) -> StmtPtr {
            if (!s) return s;
            if (s->kind == StmtKind::Call && targets.count(s->id)) {
              if (slot.empty()) return mk::finish(s);
              std::string imp = fresh_temp("e");
              return mk::seq(
                  {null_init(imp),
                   mk::finish(mk::seq({s, mk::assign(imp, mk::var(slot))}),
                              std::vector<std::string>{imp})});
            }
            auto copy = std::make_shared<Stmt>(*s);
            bool changed = false;
            auto visit = [&](StmtPtr& slotRef) {
              StmtPtr nu = self(slotRef, self);
              if (nu != slotRef) {
                slotRef = nu;
                changed = true;
              }
            };
            for (auto& c : copy->stmts) visit(c);
            visit(copy->init);
            visit(copy->step);
            visit(copy->body);
            visit(copy->elseBody);
            for (auto& cs : copy->cases) visit(cs.body);
            if (!changed) return s;
            copy->id = next_node_id();
            if (copy->kind == StmtKind::Seq) return mk::seq(copy->stmts);
            return StmtPtr(copy);
          };
          m.body = rewriteSites(m.body, rewriteSites);
        }
        state.pulled.insert(name);
        report.pulls.push_back(name);
        report.firings.push_back({RuleId::FinishMethodPull, name, fin->id});
        if (capture) report.checkpoints.push_back(p);
        pulled = true;
      }
    }
    if (!pulled && fired) {
      p.methods[mi].body = state.snapshots[name];
      report.rollbacks.push_back(name);
      if (capture) report.checkpoints.push_back(p);
    }
  }
  return {std::move(p), std::move(report)};
}

// finish{S}<exlist>  =>  finish{S}; exlist
inline Program lower_pending(const Program& input) {
  using namespace afe_detail;
  Program p = input;
  for (auto& m : p.methods) {
    auto lower = [&](const StmtPtr& s, auto&& self) -> StmtPtr {
      if (!s) return s;
      auto copy = std::make_shared<Stmt>(*s);
      copy->id = next_node_id();
      for (auto& c : copy->stmts) c = self(c, self);
      copy->init = self(copy->init, self);
      copy->step = self(copy->step, self);
      copy->body = self(copy->body, self);
      copy->elseBody = self(copy->elseBody, self);
      for (auto& cs : copy->cases) cs.body = self(cs.body, self);
      if (copy->kind == StmtKind::Finish && !copy->pending.empty()) {
        std::vector<std::string> pend = copy->pending;
        copy->pending.clear();
        std::vector<StmtPtr> out{StmtPtr(copy)};
        for (auto& st : pending_stmts(pend)) out.push_back(st);
        return mk::seq(std::move(out));
      }
      if (copy->kind == StmtKind::Seq) return mk::seq(copy->stmts);
      return StmtPtr(copy);
    };
    m.body = lower(m.body, lower);
  }
  return p;
}

}  // namespace finch
