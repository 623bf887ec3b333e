// Deterministic reference engine. Unclocked asyncs execute inline,
// depth-first, at their spawn point. Clocked asyncs become baton tasks:
// exactly one task runs at any moment, handing over in round-robin order at
// barriers, joins and task ends, which gives barrier programs a fixed serial
// schedule. Ground truth for store checksums and exception outcomes.
#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>

#include "finch/ast.hpp"
#include "finch/runtime.hpp"  // RunResult, Counters, TraceEvent, FinchDeadlock
#include "finch/values.hpp"

namespace finch {

namespace oracle_detail {

struct OScope {
  long long pending = 0;
  std::vector<ExcRef> excs;
};

struct OClock {
  long long registered = 0;
  long long arrived = 0;
  uint64_t generation = 0;
};

class Oracle {
  using Flow = rt::Flow;

 public:
  Oracle(const Program& p, bool trace) : prog_(p), trace_(trace) {
    for (const auto& name : collect_clocks(p)) clocks_[name];
    for (const auto& m : prog_.methods)
      if (!m.exceptionSlot.empty()) globals_[m.exceptionSlot] = ExcRef{};
  }

  RunResult run(const std::vector<Value>& input) {
    auto t0 = std::chrono::steady_clock::now();
    const Method* entry = prog_.find(prog_.entry);
    if (!entry) throw std::runtime_error("missing entry method");

    auto root = std::make_unique<OTask>();
    root->id = 0;
    root->frame = bind_params(*entry, input);
    root->scope = &rootScope_;
    for (auto& [name, c] : clocks_) {
      root->clocks.push_back(&c);
      c.registered += 1;
    }
    tasks_.push_back(std::move(root));

    RunResult result;
    ExcRef syncExc;
    {
      OTask& me = *tasks_[0];
      try {
        exec(entry->body, me);
      } catch (FinchThrow& ft) {
        syncExc = ft.exc;
      } catch (const EngineAbort&) {
        finishThreads();
        throw FinchDeadlock(abortMessage_);
      }
      try {
        for (OClock* c : me.clocks) deregister(c);
        yieldUntil(me, [&] { return rootScope_.pending == 0; });
      } catch (const EngineAbort&) {
        finishThreads();
        throw FinchDeadlock(abortMessage_);
      }
    }
    finishThreads();

    if (syncExc)
      result.exception = syncExc;
    else if (!rootScope_.excs.empty())
      result.exception = make_multi_exc(rootScope_.excs);
    result.finalFrame = tasks_[0]->frame;
    result.globals = globals_;
    result.checksum = checksum_store(tasks_[0]->frame);
    result.counters = counters_;
    result.trace = trace_events_;
    result.elapsedMs = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    return result;
  }

 private:
  struct OTask {
    int id = 0;
    StmtPtr body;
    Frame frame;
    OScope* scope = nullptr;
    std::vector<OClock*> clocks;
    std::function<bool()> waitCond;  // non-null while blocked
    bool done = false;
    std::thread th;
  };

  const Program& prog_;
  bool trace_;
  std::vector<std::unique_ptr<OTask>> tasks_;
  std::mutex m_;
  std::condition_variable cv_;
  int current_ = 0;
  bool abort_ = false;
  std::string abortMessage_;

  OScope rootScope_;
  std::map<std::string, OClock> clocks_;
  Frame globals_;
  Counters counters_;
  std::vector<TraceEvent> trace_events_;
  uint64_t seq_ = 0;

  // --- baton ------------------------------------------------------------------

  bool runnable(const OTask& t) {
    return !t.done && (!t.waitCond || t.waitCond());
  }

  // Caller holds m_. Picks the next runnable task after `from`, round robin.
  void handOver(int from) {
    int n = static_cast<int>(tasks_.size());
    for (int k = 1; k <= n; ++k) {
      int cand = (from + k) % n;
      if (runnable(*tasks_[static_cast<size_t>(cand)])) {
        current_ = cand;
        cv_.notify_all();
        return;
      }
    }
    bool allDone = true;
    for (const auto& t : tasks_)
      if (!t->done) allDone = false;
    if (allDone) return;  // reaped by finishThreads
    abort_ = true;
    abortMessage_ = "deadlock: no task is runnable in the serial schedule";
    cv_.notify_all();
  }

  void yieldUntil(OTask& me, std::function<bool()> cond) {
    std::unique_lock<std::mutex> lk(m_);
    while (!cond()) {
      me.waitCond = cond;
      handOver(me.id);
      cv_.wait(lk, [&] { return current_ == me.id || abort_; });
      if (abort_) {
        me.waitCond = nullptr;
        throw EngineAbort{abortMessage_};
      }
    }
    me.waitCond = nullptr;
  }

  void taskEnded(OTask& me) {
    std::lock_guard<std::mutex> g(m_);
    me.done = true;
    handOver(me.id);
  }

  void finishThreads() {
    {
      std::lock_guard<std::mutex> g(m_);
      abort_ = abort_ || false;
      cv_.notify_all();
    }
    for (auto& t : tasks_)
      if (t->th.joinable()) t->th.join();
  }

  // --- clocks -----------------------------------------------------------------

  void releaseIfReady(OClock& c) {
    if (c.registered > 0 && c.arrived == c.registered) {
      c.arrived = 0;
      c.generation += 1;
    }
  }

  void deregister(OClock* c) {
    std::lock_guard<std::mutex> g(m_);
    c->registered -= 1;
    releaseIfReady(*c);
  }

  void reregister(OClock* c) {
    std::lock_guard<std::mutex> g(m_);
    c->registered += 1;
  }

  void advanceAll(OTask& me) {
    counters_.advances += 1;
    if (me.clocks.empty()) return;
    std::vector<std::pair<OClock*, uint64_t>> waits;
    {
      std::lock_guard<std::mutex> g(m_);
      for (OClock* c : me.clocks) {
        uint64_t gen = c->generation;
        c->arrived += 1;
        releaseIfReady(*c);
        if (c->generation == gen) waits.emplace_back(c, gen);
      }
    }
    for (auto& [c, gen] : waits)
      yieldUntil(me, [c = c, gen = gen] { return c->generation > gen; });
  }

  // --- execution ----------------------------------------------------------------

  EvalEnv makeEnv(OTask& t) {
    EvalEnv env;
    env.frame = &t.frame;
    env.readGlobal = [this](const std::string& n) -> Value {
      auto it = globals_.find(n);
      if (it == globals_.end()) throw fault("UnboundGlobal");
      return it->second;
    };
    env.idleWorkers = [] { return 0ll; };
    env.nthreads = [] { return 1ll; };
    env.arrayLoad = [](const ArrayRef& a, long long i) {
      return a->elems[static_cast<size_t>(i)];
    };
    return env;
  }

  void recordWrite(const std::string& array, long long idx, long long v) {
    if (!trace_) return;
    trace_events_.push_back({seq_++, array, idx, v});
  }

  void spawnClocked(const StmtPtr& asyncStmt, OTask& parent) {
    auto task = std::make_unique<OTask>();
    OTask* tp = task.get();
    tp->id = static_cast<int>(tasks_.size());
    tp->body = asyncStmt->body;
    tp->frame = parent.frame;
    tp->scope = parent.scope;
    {
      std::lock_guard<std::mutex> g(m_);
      for (const auto& cn : asyncStmt->clocks) {
        OClock* c = &clocks_.at(cn);
        c->registered += 1;
        tp->clocks.push_back(c);
      }
      parent.scope->pending += 1;
      tasks_.push_back(std::move(task));
    }
    tp->th = std::thread([this, tp] {
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return current_ == tp->id || abort_; });
        if (abort_) {
          tp->done = true;
          return;
        }
      }
      try {
        exec(tp->body, *tp);
      } catch (FinchThrow& ft) {
        tp->scope->excs.push_back(ft.exc);
      } catch (const EngineAbort&) {
        std::lock_guard<std::mutex> g(m_);
        tp->done = true;
        return;
      }
      for (OClock* c : tp->clocks) deregister(c);
      {
        std::lock_guard<std::mutex> g(m_);
        tp->scope->pending -= 1;
      }
      taskEnded(*tp);
    });
  }

  Flow exec(const StmtPtr& s, OTask& t) {
    switch (s->kind) {
      case StmtKind::Skip:
        return Flow::Normal;
      case StmtKind::Seq:
        for (const auto& c : s->stmts)
          if (exec(c, t) == Flow::Returned) return Flow::Returned;
        return Flow::Normal;
      case StmtKind::Assign: {
        EvalEnv env = makeEnv(t);
        Value v = eval(s->expr, env);
        if (s->lhsIndex) {
          ArrayRef arr = as_array(read_var(env, s->lhsName));
          long long idx = as_int(eval(s->lhsIndex, env));
          if (idx < 0 || idx >= static_cast<long long>(arr->elems.size()))
            throw fault("IndexOutOfBounds");
          long long iv = as_int(v);
          arr->elems[static_cast<size_t>(idx)] = iv;
          recordWrite(s->lhsName, idx, iv);
        } else if (is_global_name(s->lhsName)) {
          globals_[s->lhsName] = v;
        } else {
          t.frame[s->lhsName] = v;
        }
        return Flow::Normal;
      }
      case StmtKind::Finish: {
        if (s->synthetic)
          counters_.syntheticFinishes += 1;
        else
          counters_.finishes += 1;
        OScope scope;
        OScope* prev = t.scope;
        t.scope = &scope;
        Flow flow = Flow::Normal;
        try {
          flow = exec(s->body, t);
        } catch (FinchThrow& ft) {
          scope.excs.push_back(ft.exc);
        }
        t.scope = prev;
        if (scope.pending > 0) {
          for (OClock* c : t.clocks) deregister(c);
          yieldUntil(t, [&scope] { return scope.pending == 0; });
          for (OClock* c : t.clocks) reregister(c);
        }
        if (!scope.excs.empty()) throw FinchThrow{make_multi_exc(scope.excs)};
        return flow;
      }
      case StmtKind::Async: {
        counters_.asyncs += 1;
        if (!s->clocks.empty()) {
          spawnClocked(s, t);
          return Flow::Normal;
        }
        // Immediate call: same frame snapshot rule, failures land at the
        // enclosing join, siblings unaffected.
        Frame saved = t.frame;
        try {
          exec(s->body, t);
        } catch (FinchThrow& ft) {
          t.scope->excs.push_back(ft.exc);
        }
        t.frame = std::move(saved);
        return Flow::Normal;
      }
      case StmtKind::For: {
        EvalEnv env = makeEnv(t);
        if (s->init && exec(s->init, t) == Flow::Returned) return Flow::Returned;
        for (;;) {
          if (!as_bool(eval(s->expr, env))) break;
          if (exec(s->body, t) == Flow::Returned) return Flow::Returned;
          if (s->step && exec(s->step, t) == Flow::Returned)
            return Flow::Returned;
        }
        return Flow::Normal;
      }
      case StmtKind::While: {
        EvalEnv env = makeEnv(t);
        while (as_bool(eval(s->expr, env))) {
          if (exec(s->body, t) == Flow::Returned) return Flow::Returned;
        }
        return Flow::Normal;
      }
      case StmtKind::If: {
        EvalEnv env = makeEnv(t);
        if (as_bool(eval(s->expr, env))) return exec(s->body, t);
        if (s->elseBody) return exec(s->elseBody, t);
        return Flow::Normal;
      }
      case StmtKind::Switch: {
        EvalEnv env = makeEnv(t);
        long long v = as_int(eval(s->expr, env));
        size_t start = s->cases.size();
        for (size_t i = 0; i < s->cases.size(); ++i)
          if (!s->cases[i].isDefault && s->cases[i].value == v) {
            start = i;
            break;
          }
        if (start == s->cases.size())
          for (size_t i = 0; i < s->cases.size(); ++i)
            if (s->cases[i].isDefault) {
              start = i;
              break;
            }
        for (size_t i = start; i < s->cases.size(); ++i)
          if (exec(s->cases[i].body, t) == Flow::Returned)
            return Flow::Returned;
        return Flow::Normal;
      }
      case StmtKind::TryCatch: {
        try {
          return exec(s->body, t);
        } catch (FinchThrow& ft) {
          if (!catches(s->catchTag, ft.exc)) throw;
          t.frame[s->catchVar] = ft.exc;
          return exec(s->elseBody, t);
        }
      }
      case StmtKind::Throw: {
        EvalEnv env = makeEnv(t);
        Value v = eval(s->expr, env);
        const ExcRef* er = std::get_if<ExcRef>(&v);
        if (!er || !*er) throw fault("NullThrow");
        throw FinchThrow{*er};
      }
      case StmtKind::AdvanceAll:
        advanceAll(t);
        return Flow::Normal;
      case StmtKind::Call: {
        const Method* callee = prog_.find(s->target);
        if (!callee) throw fault("UnknownMethod");
        EvalEnv env = makeEnv(t);
        std::vector<Value> args;
        for (const auto& a : s->args) args.push_back(eval(a, env));
        Frame saved = std::move(t.frame);
        t.frame = bind_params(*callee, args);
        try {
          exec(callee->body, t);
        } catch (...) {
          t.frame = std::move(saved);
          throw;
        }
        t.frame = std::move(saved);
        return Flow::Normal;
      }
      case StmtKind::Return:
        return Flow::Returned;
    }
    return Flow::Normal;
  }
};

}  // namespace oracle_detail

inline RunResult serial_oracle(const Program& p, const std::vector<Value>& input,
                               bool trace = false) {
  oracle_detail::Oracle oracle(p, trace);
  return oracle.run(input);
}

}  // namespace finch
