// Finch IR: statement/expression trees, well-formedness checks and the
// structural equality used by the golden tests.
#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace finch {

struct SrcLoc {
  int line = 0;
  int col = 0;
};

struct Diagnostic {
  SrcLoc loc;
  std::string message;
};

enum class ValueKind { Int, Bool, Array, Exc };

inline const char* kind_name(ValueKind k) {
  switch (k) {
    case ValueKind::Int: return "int";
    case ValueKind::Bool: return "bool";
    case ValueKind::Array: return "array";
    case ValueKind::Exc: return "exc";
  }
  return "?";
}

// Compiler-introduced temporaries carry this prefix; structural equality
// treats them up to renaming and store checksums skip them.
inline constexpr char kTempPrefix = '$';

inline bool is_temp_name(const std::string& n) {
  return !n.empty() && n[0] == kTempPrefix;
}

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

enum class ExprKind {
  IntLit,
  BoolLit,
  NullLit,
  Var,
  ArrayRead,   // name[lhs]
  Unary,       // uop lhs
  Binary,      // lhs bop rhs
  Builtin,     // name() -- idleWorkers | nthreads
  NewArray,    // newarray(lhs)
  NewExc,      // new name
  NewMulti,    // new ME(lhs)
};

enum class UnOp { Neg, Not };
enum class BinOp { Add, Sub, Mul, Div, Mod, Lt, Le, Gt, Ge, Eq, Ne, And, Or };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
  ExprKind kind{};
  long long intVal = 0;
  bool boolVal = false;
  std::string name;
  UnOp uop{};
  BinOp bop{};
  ExprPtr lhs;
  ExprPtr rhs;
  SrcLoc loc{};
};

inline const char* builtin_idle_workers() { return "idleWorkers"; }
inline const char* builtin_nthreads() { return "nthreads"; }

// ---------------------------------------------------------------------------
// Statements
// ---------------------------------------------------------------------------

enum class StmtKind {
  Skip,
  Seq,
  Assign,
  Finish,
  Async,
  For,
  While,
  If,
  Switch,
  TryCatch,
  Throw,
  AdvanceAll,
  Call,
  Return,
};

struct Stmt;
using StmtPtr = std::shared_ptr<const Stmt>;

struct SwitchCase {
  long long value = 0;
  bool isDefault = false;
  StmtPtr body;
};

// `catchTag == "Exception"` catches every exception kind.
inline constexpr const char* kCatchAll = "Exception";

struct Stmt {
  StmtKind kind{};
  uint64_t id = 0;
  SrcLoc loc{};

  std::vector<StmtPtr> stmts;  // Seq

  StmtPtr body;      // Finish/Async/While/For/If-then/Try-body
  StmtPtr elseBody;  // If-else (may be null), Try-handler
  StmtPtr init;      // For (may be null)
  StmtPtr step;      // For (may be null)

  ExprPtr expr;  // cond / rhs / throw value / switch scrutinee

  std::string lhsName;  // Assign
  ExprPtr lhsIndex;     // Assign into array element when non-null

  std::vector<std::string> pending;  // Finish: ordered pending-exception vars
  bool synthetic = false;            // Finish introduced by loop templates

  std::vector<std::string> clocks;  // Async

  std::vector<SwitchCase> cases;  // Switch

  std::string catchVar;  // TryCatch
  std::string catchTag;  // TryCatch; kCatchAll catches all

  std::string target;         // Call
  std::vector<ExprPtr> args;  // Call
};

struct Method {
  std::string name;
  std::vector<std::pair<std::string, ValueKind>> params;
  StmtPtr body;
  // Set only after the exception-aware Finish-Method Pull ran on this method;
  // names the global slot that exports its pending exception.
  std::string exceptionSlot;
};

struct Program {
  std::vector<Method> methods;
  std::string entry = "main";

  const Method* find(const std::string& name) const {
    for (const auto& m : methods)
      if (m.name == name) return &m;
    return nullptr;
  }
  int index_of(const std::string& name) const {
    for (size_t i = 0; i < methods.size(); ++i)
      if (methods[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

// ---------------------------------------------------------------------------
// Node factories
// ---------------------------------------------------------------------------

inline uint64_t next_node_id() {
  static std::atomic<uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace mk {

inline ExprPtr int_lit(long long v) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::IntLit;
  e->intVal = v;
  return e;
}

inline ExprPtr bool_lit(bool v) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::BoolLit;
  e->boolVal = v;
  return e;
}

inline ExprPtr null_lit() {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::NullLit;
  return e;
}

inline ExprPtr var(std::string name) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Var;
  e->name = std::move(name);
  return e;
}

inline ExprPtr array_read(std::string name, ExprPtr idx) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::ArrayRead;
  e->name = std::move(name);
  e->lhs = std::move(idx);
  return e;
}

inline ExprPtr unary(UnOp op, ExprPtr a) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Unary;
  e->uop = op;
  e->lhs = std::move(a);
  return e;
}

inline ExprPtr binary(BinOp op, ExprPtr a, ExprPtr b) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Binary;
  e->bop = op;
  e->lhs = std::move(a);
  e->rhs = std::move(b);
  return e;
}

inline ExprPtr builtin(std::string name) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::Builtin;
  e->name = std::move(name);
  return e;
}

inline ExprPtr new_array(ExprPtr size) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::NewArray;
  e->lhs = std::move(size);
  return e;
}

inline ExprPtr new_exc(std::string tag) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::NewExc;
  e->name = std::move(tag);
  return e;
}

inline ExprPtr new_multi(ExprPtr inner) {
  auto e = std::make_shared<Expr>();
  e->kind = ExprKind::NewMulti;
  e->lhs = std::move(inner);
  return e;
}

inline std::shared_ptr<Stmt> stmt(StmtKind k) {
  auto s = std::make_shared<Stmt>();
  s->kind = k;
  s->id = next_node_id();
  return s;
}

inline StmtPtr skip() { return stmt(StmtKind::Skip); }

// Flattens nested sequences, drops skips, collapses to the canonical form
// (empty -> Skip, singleton -> the statement itself).
inline StmtPtr seq(std::vector<StmtPtr> items) {
  std::vector<StmtPtr> flat;
  for (auto& s : items) {
    if (!s || s->kind == StmtKind::Skip) continue;
    if (s->kind == StmtKind::Seq) {
      for (const auto& c : s->stmts) flat.push_back(c);
    } else {
      flat.push_back(s);
    }
  }
  if (flat.empty()) return skip();
  if (flat.size() == 1) return flat[0];
  auto s = stmt(StmtKind::Seq);
  s->stmts = std::move(flat);
  return s;
}

inline StmtPtr assign(std::string name, ExprPtr rhs) {
  auto s = stmt(StmtKind::Assign);
  s->lhsName = std::move(name);
  s->expr = std::move(rhs);
  return s;
}

inline StmtPtr array_assign(std::string name, ExprPtr idx, ExprPtr rhs) {
  auto s = stmt(StmtKind::Assign);
  s->lhsName = std::move(name);
  s->lhsIndex = std::move(idx);
  s->expr = std::move(rhs);
  return s;
}

inline StmtPtr finish(StmtPtr body, std::vector<std::string> pending = {},
                      bool synthetic = false) {
  auto s = stmt(StmtKind::Finish);
  s->body = std::move(body);
  s->pending = std::move(pending);
  s->synthetic = synthetic;
  return s;
}

inline StmtPtr async(StmtPtr body, std::vector<std::string> clocks = {}) {
  auto s = stmt(StmtKind::Async);
  s->body = std::move(body);
  s->clocks = std::move(clocks);
  return s;
}

inline StmtPtr for_loop(StmtPtr init, ExprPtr cond, StmtPtr step, StmtPtr body) {
  auto s = stmt(StmtKind::For);
  s->init = std::move(init);
  s->expr = std::move(cond);
  s->step = std::move(step);
  s->body = std::move(body);
  return s;
}

inline StmtPtr while_loop(ExprPtr cond, StmtPtr body) {
  auto s = stmt(StmtKind::While);
  s->expr = std::move(cond);
  s->body = std::move(body);
  return s;
}

inline StmtPtr if_stmt(ExprPtr cond, StmtPtr then, StmtPtr els = nullptr) {
  auto s = stmt(StmtKind::If);
  s->expr = std::move(cond);
  s->body = std::move(then);
  s->elseBody = std::move(els);
  return s;
}

inline StmtPtr switch_stmt(ExprPtr scrutinee, std::vector<SwitchCase> cases) {
  auto s = stmt(StmtKind::Switch);
  s->expr = std::move(scrutinee);
  s->cases = std::move(cases);
  return s;
}

inline StmtPtr try_catch(StmtPtr body, std::string var, std::string tag,
                         StmtPtr handler) {
  auto s = stmt(StmtKind::TryCatch);
  s->body = std::move(body);
  s->catchVar = std::move(var);
  s->catchTag = std::move(tag);
  s->elseBody = std::move(handler);
  return s;
}

inline StmtPtr throw_stmt(ExprPtr value) {
  auto s = stmt(StmtKind::Throw);
  s->expr = std::move(value);
  return s;
}

inline StmtPtr advance_all() { return stmt(StmtKind::AdvanceAll); }

inline StmtPtr call(std::string target, std::vector<ExprPtr> args = {}) {
  auto s = stmt(StmtKind::Call);
  s->target = std::move(target);
  s->args = std::move(args);
  return s;
}

inline StmtPtr ret() { return stmt(StmtKind::Return); }

}  // namespace mk

// ---------------------------------------------------------------------------
// Tree walking helpers
// ---------------------------------------------------------------------------

// Calls fn on every statement node of the tree, parents after children when
// postOrder is set.
template <typename Fn>
void for_each_stmt(const StmtPtr& s, Fn&& fn, bool postOrder = false) {
  if (!s) return;
  if (!postOrder) fn(s);
  for (const auto& c : s->stmts) for_each_stmt(c, fn, postOrder);
  for_each_stmt(s->init, fn, postOrder);
  for_each_stmt(s->step, fn, postOrder);
  for_each_stmt(s->body, fn, postOrder);
  for_each_stmt(s->elseBody, fn, postOrder);
  for (const auto& cs : s->cases) for_each_stmt(cs.body, fn, postOrder);
  if (postOrder) fn(s);
}

template <typename Fn>
void for_each_expr_in(const StmtPtr& s, Fn&& fn) {
  if (!s) return;
  auto walkExpr = [&](const ExprPtr& e, auto&& self) -> void {
    if (!e) return;
    fn(e);
    self(e->lhs, self);
    self(e->rhs, self);
  };
  for_each_stmt(s, [&](const StmtPtr& n) {
    walkExpr(n->expr, walkExpr);
    walkExpr(n->lhsIndex, walkExpr);
    for (const auto& a : n->args) walkExpr(a, walkExpr);
  });
}

// ---------------------------------------------------------------------------
// Structural equality (alpha-equivalence on compiler temporaries)
// ---------------------------------------------------------------------------

namespace detail {

struct AlphaMap {
  std::map<std::string, std::string> fwd, rev;

  bool match(const std::string& a, const std::string& b) {
    bool ta = is_temp_name(a), tb = is_temp_name(b);
    if (ta != tb) return false;
    if (!ta) return a == b;
    auto fa = fwd.find(a);
    auto rb = rev.find(b);
    if (fa == fwd.end() && rb == rev.end()) {
      fwd[a] = b;
      rev[b] = a;
      return true;
    }
    return fa != fwd.end() && rb != rev.end() && fa->second == b &&
           rb->second == a;
  }
};

inline bool expr_equal(const ExprPtr& a, const ExprPtr& b, AlphaMap& names) {
  if (!a || !b) return !a && !b;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case ExprKind::IntLit: return a->intVal == b->intVal;
    case ExprKind::BoolLit: return a->boolVal == b->boolVal;
    case ExprKind::NullLit: return true;
    case ExprKind::Var: return names.match(a->name, b->name);
    case ExprKind::ArrayRead:
      return names.match(a->name, b->name) && expr_equal(a->lhs, b->lhs, names);
    case ExprKind::Unary:
      return a->uop == b->uop && expr_equal(a->lhs, b->lhs, names);
    case ExprKind::Binary:
      return a->bop == b->bop && expr_equal(a->lhs, b->lhs, names) &&
             expr_equal(a->rhs, b->rhs, names);
    case ExprKind::Builtin: return a->name == b->name;
    case ExprKind::NewArray: return expr_equal(a->lhs, b->lhs, names);
    case ExprKind::NewExc: return a->name == b->name;
    case ExprKind::NewMulti: return expr_equal(a->lhs, b->lhs, names);
  }
  return false;
}

inline bool stmt_equal(const StmtPtr& a, const StmtPtr& b, AlphaMap& names) {
  if (!a || !b) return !a && !b;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case StmtKind::Skip:
    case StmtKind::AdvanceAll:
    case StmtKind::Return:
      return true;
    case StmtKind::Seq: {
      if (a->stmts.size() != b->stmts.size()) return false;
      for (size_t i = 0; i < a->stmts.size(); ++i)
        if (!stmt_equal(a->stmts[i], b->stmts[i], names)) return false;
      return true;
    }
    case StmtKind::Assign:
      return names.match(a->lhsName, b->lhsName) &&
             expr_equal(a->lhsIndex, b->lhsIndex, names) &&
             expr_equal(a->expr, b->expr, names);
    case StmtKind::Finish: {
      if (a->pending.size() != b->pending.size()) return false;
      for (size_t i = 0; i < a->pending.size(); ++i)
        if (!names.match(a->pending[i], b->pending[i])) return false;
      return stmt_equal(a->body, b->body, names);
    }
    case StmtKind::Async:
      return a->clocks == b->clocks && stmt_equal(a->body, b->body, names);
    case StmtKind::For:
      return stmt_equal(a->init, b->init, names) &&
             expr_equal(a->expr, b->expr, names) &&
             stmt_equal(a->step, b->step, names) &&
             stmt_equal(a->body, b->body, names);
    case StmtKind::While:
      return expr_equal(a->expr, b->expr, names) &&
             stmt_equal(a->body, b->body, names);
    case StmtKind::If:
      return expr_equal(a->expr, b->expr, names) &&
             stmt_equal(a->body, b->body, names) &&
             stmt_equal(a->elseBody, b->elseBody, names);
    case StmtKind::Switch: {
      if (!expr_equal(a->expr, b->expr, names)) return false;
      if (a->cases.size() != b->cases.size()) return false;
      for (size_t i = 0; i < a->cases.size(); ++i) {
        const auto& ca = a->cases[i];
        const auto& cb = b->cases[i];
        if (ca.isDefault != cb.isDefault || ca.value != cb.value) return false;
        if (!stmt_equal(ca.body, cb.body, names)) return false;
      }
      return true;
    }
    case StmtKind::TryCatch:
      return names.match(a->catchVar, b->catchVar) &&
             a->catchTag == b->catchTag && stmt_equal(a->body, b->body, names) &&
             stmt_equal(a->elseBody, b->elseBody, names);
    case StmtKind::Throw: return expr_equal(a->expr, b->expr, names);
    case StmtKind::Call: {
      if (a->target != b->target || a->args.size() != b->args.size())
        return false;
      for (size_t i = 0; i < a->args.size(); ++i)
        if (!expr_equal(a->args[i], b->args[i], names)) return false;
      return true;
    }
  }
  return false;
}

}  // namespace detail

inline bool structurally_equal(const StmtPtr& a, const StmtPtr& b) {
  detail::AlphaMap names;
  return detail::stmt_equal(a, b, names);
}

inline bool structurally_equal(const Program& a, const Program& b) {
  if (a.entry != b.entry || a.methods.size() != b.methods.size()) return false;
  for (size_t i = 0; i < a.methods.size(); ++i) {
    const auto& ma = a.methods[i];
    const auto& mb = b.methods[i];
    if (ma.name != mb.name || ma.params != mb.params) return false;
    detail::AlphaMap names;
    if (!names.match(ma.exceptionSlot.empty() ? std::string() : ma.exceptionSlot,
                     mb.exceptionSlot.empty() ? std::string() : mb.exceptionSlot) &&
        !(ma.exceptionSlot.empty() && mb.exceptionSlot.empty()))
      return false;
    if (!detail::stmt_equal(ma.body, mb.body, names)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Well-formedness
// ---------------------------------------------------------------------------

inline std::vector<Diagnostic> well_formed(const Program& p) {
  std::vector<Diagnostic> diags;
  auto err = [&](SrcLoc loc, std::string msg) {
    diags.push_back({loc, std::move(msg)});
  };

  std::set<std::string> names;
  for (const auto& m : p.methods) {
    if (!names.insert(m.name).second)
      err({}, "duplicate method '" + m.name + "'");
    std::set<std::string> pnames;
    for (const auto& pr : m.params)
      if (!pnames.insert(pr.first).second)
        err({}, "duplicate parameter '" + pr.first + "' in '" + m.name + "'");
  }
  if (!p.find(p.entry)) err({}, "missing entry method '" + p.entry + "'");

  for (const auto& m : p.methods) {
    // Call resolution and arity.
    for_each_stmt(m.body, [&](const StmtPtr& s) {
      if (s->kind != StmtKind::Call) return;
      const Method* t = p.find(s->target);
      if (!t) {
        err(s->loc, "call to undefined method '" + s->target + "' in '" +
                        m.name + "'");
      } else if (t->params.size() != s->args.size()) {
        err(s->loc, "call to '" + s->target + "' with " +
                        std::to_string(s->args.size()) + " args, expected " +
                        std::to_string(t->params.size()));
      }
    });
  }

  // Methods the root task alone can execute: the entry, plus methods whose
  // every call site sits outside any async in another root-only method.
  std::set<std::string> rootOnly{p.entry};
  {
    std::map<std::string, std::vector<std::pair<std::string, bool>>> callers;
    for (const auto& m : p.methods) {
      auto walkCalls = [&](const StmtPtr& s, bool inAsync, auto&& self) -> void {
        if (!s) return;
        if (s->kind == StmtKind::Call)
          callers[s->target].emplace_back(m.name, inAsync);
        bool in = inAsync || s->kind == StmtKind::Async;
        for (const auto& c : s->stmts) self(c, in, self);
        self(s->init, in, self);
        self(s->step, in, self);
        self(s->body, in, self);
        self(s->elseBody, in, self);
        for (const auto& cs : s->cases) self(cs.body, in, self);
      };
      walkCalls(m.body, false, walkCalls);
    }
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& m : p.methods) {
        if (rootOnly.count(m.name)) continue;
        auto it = callers.find(m.name);
        if (it == callers.end() || it->second.empty()) continue;
        bool all = true;
        for (const auto& [from, inAsync] : it->second)
          if (inAsync || !rootOnly.count(from)) all = false;
        if (all) {
          rootOnly.insert(m.name);
          changed = true;
        }
      }
    }
  }

  for (const auto& m : p.methods) {
    // AdvanceAll placement: inside a clocked async, or outside any async in
    // code only the root task runs (the root is registered on every clock
    // from program start to end).
    auto walk = [&](const StmtPtr& s, const Stmt* innermostAsync,
                    auto&& self) -> void {
      if (!s) return;
      if (s->kind == StmtKind::AdvanceAll) {
        if (innermostAsync) {
          if (innermostAsync->clocks.empty())
            err(s->loc,
                "advanceAll inside unclocked async in '" + m.name + "'");
        } else if (!rootOnly.count(m.name)) {
          err(s->loc,
              "advanceAll outside clocked async and outside root-task code "
              "(in '" + m.name + "')");
        }
        return;
      }
      const Stmt* inner =
          (s->kind == StmtKind::Async) ? s.get() : innermostAsync;
      for (const auto& c : s->stmts) self(c, inner, self);
      self(s->init, inner, self);
      self(s->step, inner, self);
      self(s->body, inner, self);
      self(s->elseBody, inner, self);
      for (const auto& cs : s->cases) self(cs.body, inner, self);
    };
    walk(m.body, nullptr, walk);

    // Switch cases: unique values, at most one default (kept last by parser).
    for_each_stmt(m.body, [&](const StmtPtr& s) {
      if (s->kind != StmtKind::Switch) return;
      std::set<long long> vals;
      int defaults = 0;
      for (const auto& c : s->cases) {
        if (c.isDefault) {
          ++defaults;
        } else if (!vals.insert(c.value).second) {
          err(s->loc, "duplicate case value " + std::to_string(c.value));
        }
      }
      if (defaults > 1) err(s->loc, "multiple default cases");
    });
  }
  return diags;
}

// Clock names mentioned anywhere in the program; the runtime creates these at
// startup and registers the root task on all of them.
inline std::vector<std::string> collect_clocks(const Program& p) {
  std::set<std::string> cs;
  for (const auto& m : p.methods)
    for_each_stmt(m.body, [&](const StmtPtr& s) {
      for (const auto& c : s->clocks) cs.insert(c);
    });
  return {cs.begin(), cs.end()};
}

}  // namespace finch
