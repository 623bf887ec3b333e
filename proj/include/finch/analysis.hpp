// Conservative dependence facts feeding the rewrite preconditions: call graph
// with recursion detection, per-method read/write summaries, escaping-async
// sets, throw potential and clock registration.
//
// Locations are variable names with whole-array granularity. Array parameters
// alias their arguments, so callee summaries are translated through each call
// site; callee-local arrays stay invisible to the caller. A missing dependence
// would be a soundness bug, a spurious one only blocks a rewrite.
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "finch/ast.hpp"

namespace finch {

// ---------------------------------------------------------------------------
// Call graph
// ---------------------------------------------------------------------------

struct CallGraph {
  std::vector<std::string> nodes;
  std::multimap<std::string, std::string> edges;        // caller -> callee
  std::map<uint64_t, std::string> siteTarget;           // call stmt id -> callee
  std::map<uint64_t, std::string> siteCaller;           // call stmt id -> caller
  std::set<uint64_t> recursiveSites;                    // sites on a cycle through the caller
  std::map<std::string, int> sccIndex;

  bool same_scc(const std::string& a, const std::string& b) const {
    auto ia = sccIndex.find(a);
    auto ib = sccIndex.find(b);
    return ia != sccIndex.end() && ib != sccIndex.end() && ia->second == ib->second;
  }
};

namespace detail {

// Iterative Tarjan over method indices.
inline std::map<std::string, int> compute_sccs(
    const std::vector<std::string>& nodes,
    const std::multimap<std::string, std::string>& edges) {
  std::map<std::string, int> nodeIdx;
  for (size_t i = 0; i < nodes.size(); ++i) nodeIdx[nodes[i]] = static_cast<int>(i);
  int n = static_cast<int>(nodes.size());
  std::vector<std::vector<int>> adj(n);
  for (const auto& [from, to] : edges) {
    auto a = nodeIdx.find(from), b = nodeIdx.find(to);
    if (a != nodeIdx.end() && b != nodeIdx.end()) adj[a->second].push_back(b->second);
  }

  std::vector<int> index(n, -1), low(n, 0), comp(n, -1);
  std::vector<bool> onStack(n, false);
  std::vector<int> stack;
  int counter = 0, comps = 0;

  struct Frame {
    int v;
    size_t child = 0;
  };
  for (int root = 0; root < n; ++root) {
    if (index[root] != -1) continue;
    std::vector<Frame> work{{root}};
    while (!work.empty()) {
      Frame& f = work.back();
      int v = f.v;
      if (f.child == 0) {
        index[v] = low[v] = counter++;
        stack.push_back(v);
        onStack[v] = true;
      }
      bool descended = false;
      while (f.child < adj[v].size()) {
        int w = adj[v][f.child++];
        if (index[w] == -1) {
          work.push_back({w});
          descended = true;
          break;
        }
        if (onStack[w]) low[v] = std::min(low[v], index[w]);
      }
      if (descended) continue;
      if (low[v] == index[v]) {
        for (;;) {
          int w = stack.back();
          stack.pop_back();
          onStack[w] = false;
          comp[w] = comps;
          if (w == v) break;
        }
        ++comps;
      }
      work.pop_back();
      if (!work.empty()) {
        int parent = work.back().v;
        low[parent] = std::min(low[parent], low[v]);
      }
    }
  }

  std::map<std::string, int> out;
  for (int i = 0; i < n; ++i) out[nodes[i]] = comp[i];
  return out;
}

}  // namespace detail

inline CallGraph build_call_graph(const Program& p) {
  CallGraph g;
  for (const auto& m : p.methods) g.nodes.push_back(m.name);
  for (const auto& m : p.methods) {
    for_each_stmt(m.body, [&](const StmtPtr& s) {
      if (s->kind != StmtKind::Call) return;
      g.edges.emplace(m.name, s->target);
      g.siteTarget[s->id] = s->target;
      g.siteCaller[s->id] = m.name;
    });
  }
  g.sccIndex = detail::compute_sccs(g.nodes, g.edges);

  // Count singleton SCCs as cyclic only with a self edge.
  std::set<std::string> selfLoop;
  for (const auto& [from, to] : g.edges)
    if (from == to) selfLoop.insert(from);
  std::map<int, int> sccSize;
  for (const auto& [name, c] : g.sccIndex) ++sccSize[c];
  for (const auto& [site, callee] : g.siteTarget) {
    const std::string& caller = g.siteCaller[site];
    if (!g.same_scc(caller, callee)) continue;
    if (sccSize[g.sccIndex.at(caller)] > 1 || selfLoop.count(caller))
      g.recursiveSites.insert(site);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Read/write sets and method summaries
// ---------------------------------------------------------------------------

struct RwSet {
  std::set<std::string> reads;
  std::set<std::string> writes;

  void add(const RwSet& o) {
    reads.insert(o.reads.begin(), o.reads.end());
    writes.insert(o.writes.begin(), o.writes.end());
  }
  static bool intersects(const std::set<std::string>& a,
                         const std::set<std::string>& b) {
    for (const auto& x : a)
      if (b.count(x)) return true;
    return false;
  }
};

struct MethodSummary {
  RwSet rw;              // caller-visible locations (params translated at sites)
  std::set<std::string> arrayLocals;  // callee-local array names, dropped at sites
  bool mayThrowSync = false;  // a call may raise synchronously
  bool mayThrowDeep = false;  // any task rooted in the method may raise
  bool leaks = false;         // spawns tasks not joined before returning
  bool leaksClocked = false;  // some leaked task is registered on a clock
  bool leakThrows = false;    // some leaked task may raise
};

// One escaping async (or a call that transitively leaks unjoined tasks).
struct EAsync {
  uint64_t siteId = 0;
  bool fromCall = false;
  bool clocked = false;
  bool mayThrow = false;
  RwSet rw;
};

struct EAsyncSet {
  std::vector<EAsync> asyncs;
  bool empty() const { return asyncs.empty(); }
};

class Analysis {
 public:
  explicit Analysis(const Program& p) : prog_(p), cg_(build_call_graph(p)) {
    computeArrayVars();
    computeSummaries();
  }

  const CallGraph& call_graph() const { return cg_; }
  const Program& program() const { return prog_; }

  const MethodSummary& summary(const std::string& method) const {
    static const MethodSummary empty;
    auto it = summaries_.find(method);
    return it == summaries_.end() ? empty : it->second;
  }

  // Locations a statement touches, with calls expanded through summaries.
  RwSet rw_of(const StmtPtr& s) const {
    RwSet out;
    collectRw(s, out);
    return out;
  }

  // Same, but skipping async subtrees: the part the spawning task executes.
  // Calls are kept whole, which over-approximates.
  RwSet rw_of_serial(const StmtPtr& s) const {
    RwSet out;
    collectRwSerial(s, out);
    return out;
  }

  // Asyncs within s whose joining finish is not inside s. Anything beneath a
  // finish inside s is joined there, including tasks spawned by calls.
  EAsyncSet escaping_asyncs(const StmtPtr& s) const {
    EAsyncSet out;
    collectEscaping(s, out);
    return out;
  }

  bool may_throw(const StmtPtr& s) const { return mayThrowDeep(s); }

  // Synchronous escape only: what a call site can observe as a raise.
  bool may_throw_sync(const StmtPtr& s) const { return mayThrowSync(s, {}); }

  static bool registered_on_clocks(const EAsyncSet& e) {
    for (const auto& a : e.asyncs)
      if (a.clocked) return true;
    return false;
  }

  // Per the contract: read-vs-write in either direction, plus write-vs-write
  // (reordering two writers of one location is observable).
  static bool depends(const StmtPtr& target, const EAsyncSet& sources,
                      const Analysis& facts) {
    RwSet t = facts.rw_of(target);
    for (const auto& e : sources.asyncs) {
      if (RwSet::intersects(t.reads, e.rw.writes)) return true;
      if (RwSet::intersects(t.writes, e.rw.reads)) return true;
      if (RwSet::intersects(t.writes, e.rw.writes)) return true;
    }
    return false;
  }

  bool contains_builtin(const ExprPtr& e) const {
    if (!e) return false;
    if (e->kind == ExprKind::Builtin) return true;
    return contains_builtin(e->lhs) || contains_builtin(e->rhs);
  }

 private:
  const Program& prog_;
  CallGraph cg_;
  std::map<std::string, MethodSummary> summaries_;
  std::set<std::string> arrayVars_;  // names known to hold arrays, per program

  void computeArrayVars() {
    // Array-ness propagates from params, newarray() and whole-var copies.
    for (const auto& m : prog_.methods)
      for (const auto& pr : m.params)
        if (pr.second == ValueKind::Array) arrayVars_.insert(pr.first);
    bool changed = true;
    while (changed) {
      changed = false;
      for (const auto& m : prog_.methods) {
        for_each_stmt(m.body, [&](const StmtPtr& s) {
          if (s->kind != StmtKind::Assign || s->lhsIndex) return;
          bool isArr = false;
          if (s->expr->kind == ExprKind::NewArray) isArr = true;
          if (s->expr->kind == ExprKind::Var && arrayVars_.count(s->expr->name))
            isArr = true;
          if (isArr && arrayVars_.insert(s->lhsName).second) changed = true;
        });
      }
    }
  }

  void exprRw(const ExprPtr& e, RwSet& out) const {
    if (!e) return;
    if (e->kind == ExprKind::Var || e->kind == ExprKind::ArrayRead)
      out.reads.insert(e->name);
    exprRw(e->lhs, out);
    exprRw(e->rhs, out);
  }

  // Formal-to-actual translation of a callee summary at one call site.
  void translateCall(const StmtPtr& call, RwSet& out) const {
    const Method* callee = prog_.find(call->target);
    if (!callee) return;
    const MethodSummary& sum = summary(call->target);
    std::map<std::string, std::set<std::string>> formalToActual;
    for (size_t i = 0; i < callee->params.size() && i < call->args.size(); ++i) {
      const auto& [fname, fkind] = callee->params[i];
      (void)fkind;
      std::set<std::string> roots;
      const ExprPtr& arg = call->args[i];
      if (arg->kind == ExprKind::Var) {
        roots.insert(arg->name);
      } else {
        RwSet argRw;
        exprRw(arg, argRw);
        roots = argRw.reads;
      }
      formalToActual[fname] = std::move(roots);
      // Evaluating the argument itself reads its variables.
      RwSet argRw;
      exprRw(arg, argRw);
      out.reads.insert(argRw.reads.begin(), argRw.reads.end());
    }
    // Callee frame names are invisible to the caller: keep only locations
    // that map through a formal, plus program-level exception slots.
    const std::string gexPrefix = std::string(1, kTempPrefix) + "gex";
    auto translate = [&](const std::set<std::string>& locs,
                         std::set<std::string>& dst) {
      for (const auto& loc : locs) {
        auto f = formalToActual.find(loc);
        if (f != formalToActual.end()) {
          dst.insert(f->second.begin(), f->second.end());
        } else if (loc.rfind(gexPrefix, 0) == 0) {
          dst.insert(loc);
        }
      }
    };
    translate(sum.rw.reads, out.reads);
    translate(sum.rw.writes, out.writes);
  }

  void collectRw(const StmtPtr& s, RwSet& out) const {
    if (!s) return;
    switch (s->kind) {
      case StmtKind::Assign: {
        out.writes.insert(s->lhsName);
        exprRw(s->lhsIndex, out);
        exprRw(s->expr, out);
        if (!s->lhsIndex && s->expr->kind == ExprKind::Var &&
            arrayVars_.count(s->expr->name)) {
          // Whole-array copy: the names alias from here on.
          out.reads.insert(s->lhsName);
          out.writes.insert(s->expr->name);
        }
        return;
      }
      case StmtKind::Call:
        translateCall(s, out);
        return;
      default:
        break;
    }
    exprRw(s->expr, out);
    exprRw(s->lhsIndex, out);
    for (const auto& a : s->args) exprRw(a, out);
    for (const auto& c : s->stmts) collectRw(c, out);
    collectRw(s->init, out);
    collectRw(s->step, out);
    collectRw(s->body, out);
    collectRw(s->elseBody, out);
    for (const auto& cs : s->cases) collectRw(cs.body, out);
  }

  void collectRwSerial(const StmtPtr& s, RwSet& out) const {
    if (!s || s->kind == StmtKind::Async) return;
    if (s->kind == StmtKind::Assign || s->kind == StmtKind::Call) {
      collectRw(s, out);
      return;
    }
    exprRw(s->expr, out);
    exprRw(s->lhsIndex, out);
    for (const auto& a : s->args) exprRw(a, out);
    for (const auto& c : s->stmts) collectRwSerial(c, out);
    collectRwSerial(s->init, out);
    collectRwSerial(s->step, out);
    collectRwSerial(s->body, out);
    collectRwSerial(s->elseBody, out);
    for (const auto& cs : s->cases) collectRwSerial(cs.body, out);
  }

  bool methodMayThrowSync(const std::string& name) const {
    auto it = summaries_.find(name);
    return it != summaries_.end() && it->second.mayThrowSync;
  }
  bool methodMayThrowDeep(const std::string& name) const {
    auto it = summaries_.find(name);
    return it != summaries_.end() && it->second.mayThrowDeep;
  }

  // True when executing s can raise in the executing task. `handled` carries
  // catch tags of enclosing try blocks within the analyzed region;
  // kCatchAll handles everything.
  bool mayThrowSync(const StmtPtr& s, std::set<std::string> handled) const {
    if (!s) return false;
    auto handledTag = [&](const std::string& tag) {
      return handled.count(kCatchAll) || (!tag.empty() && handled.count(tag));
    };
    switch (s->kind) {
      case StmtKind::Throw: {
        std::string tag =
            s->expr->kind == ExprKind::NewExc ? s->expr->name : std::string();
        return !handledTag(tag);
      }
      case StmtKind::Call:
        return methodMayThrowSync(s->target) && !handled.count(kCatchAll);
      case StmtKind::Finish: {
        // The join re-raises anything its tasks threw, and pending entries
        // re-raise stored exceptions of unknown kind.
        bool inner = false;
        for_each_stmt(s->body, [&](const StmtPtr& n) {
          if (n->kind == StmtKind::Async && mayThrowDeep(n->body)) inner = true;
          if (n->kind == StmtKind::Call && methodMayThrowDeep(n->target))
            inner = true;
        });
        if (!s->pending.empty()) inner = true;
        if (mayThrowSync(s->body, handled)) inner = true;
        return inner && !handled.count(kCatchAll);
      }
      case StmtKind::Async:
        return false;  // delivered at the IEF, not here
      case StmtKind::TryCatch: {
        auto inner = handled;
        inner.insert(s->catchTag);
        return mayThrowSync(s->body, inner) || mayThrowSync(s->elseBody, handled);
      }
      default: {
        if (s->kind == StmtKind::Seq) {
          for (const auto& c : s->stmts)
            if (mayThrowSync(c, handled)) return true;
          return false;
        }
        if (mayThrowSync(s->init, handled) || mayThrowSync(s->step, handled) ||
            mayThrowSync(s->body, handled) || mayThrowSync(s->elseBody, handled))
          return true;
        for (const auto& cs : s->cases)
          if (mayThrowSync(cs.body, handled)) return true;
        return false;
      }
    }
  }

  // True when any task rooted in s (including s's own execution) may raise.
  bool mayThrowDeep(const StmtPtr& s) const {
    if (mayThrowSync(s, {})) return true;
    bool any = false;
    for_each_stmt(s, [&](const StmtPtr& n) {
      if (n->kind == StmtKind::Async && mayThrowSync(n->body, {})) any = true;
      if (n->kind == StmtKind::Call && methodMayThrowDeep(n->target)) any = true;
      if (n->kind == StmtKind::Throw) {
        // A throw under a matching catch was excluded by mayThrowSync, but a
        // throw inside an async body lands at the IEF; the per-async
        // mayThrowSync above covers it.
      }
    });
    return any;
  }

  bool containsClockedTask(const StmtPtr& s) const {
    bool any = false;
    for_each_stmt(s, [&](const StmtPtr& n) {
      if (n->kind == StmtKind::Async && !n->clocks.empty()) any = true;
      if (n->kind == StmtKind::Call) {
        auto it = summaries_.find(n->target);
        if (it != summaries_.end() && it->second.leaksClocked) any = true;
      }
    });
    return any;
  }

  // Escaping asyncs of s: skip finish subtrees, record bare asyncs and calls
  // to leaking methods.
  void collectEscaping(const StmtPtr& s, EAsyncSet& out) const {
    if (!s) return;
    switch (s->kind) {
      case StmtKind::Finish:
        return;  // joined inside s
      case StmtKind::Async: {
        EAsync e;
        e.siteId = s->id;
        e.clocked = !s->clocks.empty() || containsClockedTask(s->body);
        e.mayThrow = mayThrowSync(s->body, {}) || mayThrowDeep(s->body);
        e.rw = rw_of(s->body);
        out.asyncs.push_back(std::move(e));
        return;
      }
      case StmtKind::Call: {
        auto it = summaries_.find(s->target);
        if (it != summaries_.end() && it->second.leaks) {
          EAsync e;
          e.siteId = s->id;
          e.fromCall = true;
          e.clocked = it->second.leaksClocked;
          e.mayThrow = it->second.leakThrows;
          RwSet rw;
          translateCall(s, rw);
          e.rw = std::move(rw);
          out.asyncs.push_back(std::move(e));
        }
        return;
      }
      default:
        break;
    }
    for (const auto& c : s->stmts) collectEscaping(c, out);
    collectEscaping(s->init, out);
    collectEscaping(s->step, out);
    collectEscaping(s->body, out);
    collectEscaping(s->elseBody, out);
    for (const auto& cs : s->cases) collectEscaping(cs.body, out);
  }

  // Does s spawn tasks that are not joined inside s? (outside any finish)
  void leakScan(const StmtPtr& s, bool& leaks, bool& leaksClocked,
                bool& leakThrows) const {
    if (!s) return;
    if (s->kind == StmtKind::Finish) return;
    if (s->kind == StmtKind::Async) {
      leaks = true;
      if (!s->clocks.empty() || containsClockedTask(s->body)) leaksClocked = true;
      if (mayThrowSync(s->body, {}) || mayThrowDeep(s->body)) leakThrows = true;
      return;
    }
    if (s->kind == StmtKind::Call) {
      auto it = summaries_.find(s->target);
      if (it != summaries_.end() && it->second.leaks) {
        leaks = true;
        leaksClocked = leaksClocked || it->second.leaksClocked;
        leakThrows = leakThrows || it->second.leakThrows;
      }
      return;
    }
    for (const auto& c : s->stmts) leakScan(c, leaks, leaksClocked, leakThrows);
    leakScan(s->init, leaks, leaksClocked, leakThrows);
    leakScan(s->step, leaks, leaksClocked, leakThrows);
    leakScan(s->body, leaks, leaksClocked, leakThrows);
    leakScan(s->elseBody, leaks, leaksClocked, leakThrows);
    for (const auto& cs : s->cases) leakScan(cs.body, leaks, leaksClocked, leakThrows);
  }

  void computeSummaries() {
    for (const auto& m : prog_.methods) summaries_[m.name] = {};
    // Iterate to a fixed point; sets and flags only grow.
    for (int iter = 0; iter < 64; ++iter) {
      bool changed = false;
      for (const auto& m : prog_.methods) {
        MethodSummary next;
        RwSet rw;
        collectRw(m.body, rw);
        next.rw = rw;
        for (const auto& name : arrayVars_) {
          bool isParam = false;
          for (const auto& pr : m.params) isParam |= pr.first == name;
          if (isParam) continue;
          if (is_temp_name(name) && name.rfind("$gex", 0) == 0) continue;
          if (rw.reads.count(name) || rw.writes.count(name)) {
            // Only locals allocated here are invisible to callers.
            bool allocatedHere = false;
            for_each_stmt(m.body, [&](const StmtPtr& s) {
              if (s->kind == StmtKind::Assign && !s->lhsIndex &&
                  s->lhsName == name && s->expr->kind == ExprKind::NewArray)
                allocatedHere = true;
            });
            if (allocatedHere) next.arrayLocals.insert(name);
          }
        }
        next.mayThrowSync = mayThrowSync(m.body, {});
        next.mayThrowDeep = mayThrowDeep(m.body);
        leakScan(m.body, next.leaks, next.leaksClocked, next.leakThrows);

        MethodSummary& cur = summaries_[m.name];
        if (next.rw.reads != cur.rw.reads || next.rw.writes != cur.rw.writes ||
            next.arrayLocals != cur.arrayLocals ||
            next.mayThrowSync != cur.mayThrowSync ||
            next.mayThrowDeep != cur.mayThrowDeep || next.leaks != cur.leaks ||
            next.leaksClocked != cur.leaksClocked ||
            next.leakThrows != cur.leakThrows) {
          cur = std::move(next);
          changed = true;
        }
      }
      if (!changed) break;
    }
  }
};

// Convenience wrappers matching the operation names.
inline EAsyncSet escaping_asyncs(const StmtPtr& s, const Analysis& a) {
  return a.escaping_asyncs(s);
}
inline bool may_throw(const StmtPtr& s, const Analysis& a) {
  return a.may_throw(s);
}
inline bool registered_on_clocks(const EAsyncSet& e) {
  return Analysis::registered_on_clocks(e);
}
inline bool depends(const StmtPtr& target, const EAsyncSet& sources,
                    const Analysis& facts) {
  return Analysis::depends(target, sources, facts);
}

}  // namespace finch
