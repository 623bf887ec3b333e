// Multi-worker interpreter: per-worker deques with help-first spawning and
// FIFO stealing, finish scopes with exception aggregation, clock barriers,
// an idle-worker counter read without synchronisation, and exact dynamic
// operation counters.
#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <random>
#include <stdexcept>
#include <thread>

#include "finch/ast.hpp"
#include "finch/values.hpp"

namespace finch {

struct RuntimeConfig {
  int nWorkers = 1;
  uint64_t seed = 0;  // nonzero enables scheduling jitter
  std::function<long long(long long)> idleHook;  // call index -> forced count
  bool trace = false;
  size_t traceCapacity = 1 << 20;
  // Test hook: pretend one never-arriving task is registered on this clock.
  std::string holdClock;
};

struct Counters {
  long long asyncs = 0;
  long long finishes = 0;           // source-level joins
  long long syntheticFinishes = 0;  // template-introduced joins
  long long advances = 0;
};

struct TraceEvent {
  uint64_t seq = 0;
  std::string array;
  long long index = 0;
  long long value = 0;
};

struct RunResult {
  uint64_t checksum = 0;
  ExcRef exception;  // null when the program completed normally
  Counters counters;
  std::vector<TraceEvent> trace;
  double elapsedMs = 0;
  Frame finalFrame;  // entry frame at exit
  Frame globals;     // exception slots
};

class FinchDeadlock : public std::runtime_error {
 public:
  explicit FinchDeadlock(const std::string& m) : std::runtime_error(m) {}
};

namespace rt {

struct FinishScope {
  std::atomic<long long> pending{0};
  std::mutex m;
  std::vector<ExcRef> excs;

  void add_exc(ExcRef e) {
    std::lock_guard<std::mutex> g(m);
    excs.push_back(std::move(e));
  }
};

struct Clock {
  long long registered = 0;
  long long arrived = 0;
  uint64_t generation = 0;
};

struct Task {
  StmtPtr body;
  Frame frame;
  FinishScope* scope = nullptr;
  std::vector<Clock*> clocks;
  bool isRoot = false;
};

enum class Flow { Normal, Returned };

class Engine {
 public:
  Engine(const Program& p, const RuntimeConfig& cfg) : prog_(p), cfg_(cfg) {
    for (const auto& name : collect_clocks(p)) clocks_[name];
    if (!cfg_.holdClock.empty()) clocks_[cfg_.holdClock].registered += 1;
    for (const auto& m : prog_.methods)
      if (!m.exceptionSlot.empty()) globals_[m.exceptionSlot] = ExcRef{};
    for (int w = 0; w < cfg_.nWorkers; ++w)
      queues_.push_back(std::make_unique<Queue>());
  }

  RunResult run(const std::vector<Value>& input) {
    auto t0 = std::chrono::steady_clock::now();
    const Method* entry = prog_.find(prog_.entry);
    if (!entry) throw std::runtime_error("missing entry method");

    FinishScope rootScope;
    auto rootTask = std::make_unique<Task>();
    rootTask->body = entry->body;
    rootTask->frame = bind_params(*entry, input);
    rootTask->scope = &rootScope;
    rootTask->isRoot = true;
    for (auto& [name, clk] : clocks_) {
      rootTask->clocks.push_back(&clk);
      clk.registered += 1;
    }

    for (int w = 0; w < cfg_.nWorkers; ++w)
      workers_.emplace_back([this, w] { workerLoop(w); });
    {
      // Let every worker park once so the first idle reading is stable.
      std::unique_lock<std::mutex> lk(parkM_);
      parkCv_.wait(lk, [&] {
        return idle_.load(std::memory_order_relaxed) == cfg_.nWorkers;
      });
    }
    push(0, std::move(rootTask));
    {
      std::unique_lock<std::mutex> lk(parkM_);
      parkCv_.wait(lk, [&] { return rootDone_ || aborted_.load(); });
    }
    shutdown_.store(true);
    parkCv_.notify_all();
    for (auto& th : workers_) th.join();
    if (aborted_.load() && !rootDone_) throw FinchDeadlock(abortMessage_);

    RunResult result;
    result.exception = rootExc_;
    result.finalFrame = rootFrame_;
    result.globals = globals_;
    result.checksum = checksum_store(rootFrame_);
    result.counters.asyncs = asyncs_.load();
    result.counters.finishes = finishes_.load();
    result.counters.syntheticFinishes = synFinishes_.load();
    result.counters.advances = advances_.load();
    {
      std::lock_guard<std::mutex> g(traceM_);
      result.trace = trace_;
      std::sort(result.trace.begin(), result.trace.end(),
                [](const TraceEvent& a, const TraceEvent& b) {
                  return a.seq < b.seq;
                });
    }
    result.elapsedMs = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    return result;
  }

 private:
  const Program& prog_;
  RuntimeConfig cfg_;

  std::vector<std::thread> workers_;
  struct Queue {
    std::mutex m;
    std::deque<std::unique_ptr<Task>> dq;
  };
  std::vector<std::unique_ptr<Queue>> queues_;

  std::mutex parkM_;  // guards parking, clocks and the root outcome
  std::condition_variable parkCv_;
  std::atomic<int> idle_{0};
  std::atomic<bool> shutdown_{false};
  std::atomic<bool> aborted_{false};
  std::atomic<uint64_t> activity_{0};
  std::string abortMessage_;

  bool rootDone_ = false;
  ExcRef rootExc_;
  Frame rootFrame_;

  std::map<std::string, Clock> clocks_;  // guarded by parkM_
  Frame globals_;
  std::mutex globalsM_;

  std::atomic<long long> asyncs_{0}, finishes_{0}, synFinishes_{0},
      advances_{0};
  std::atomic<long long> idleCalls_{0};

  std::mutex traceM_;
  std::vector<TraceEvent> trace_;
  std::atomic<uint64_t> traceSeq_{0};

  struct WorkerCtx {
    int id = 0;
    std::mt19937_64 rng;
    bool amIdle = false;
  };
  static thread_local WorkerCtx* tls_;

  // A worker counts as idle from the moment it fails to find work until it
  // actually acquires a task; brief wakeups to rescan do not drop the count.
  void becomeIdle(WorkerCtx& ctx) {
    if (ctx.amIdle) return;
    ctx.amIdle = true;
    idle_.fetch_add(1, std::memory_order_relaxed);
    parkCv_.notify_all();
  }
  void becomeBusy(WorkerCtx& ctx) {
    if (!ctx.amIdle) return;
    ctx.amIdle = false;
    idle_.fetch_sub(1, std::memory_order_relaxed);
  }

  // --- queues ---------------------------------------------------------------

  void push(int w, std::unique_ptr<Task> t) {
    {
      Queue& q = *queues_[static_cast<size_t>(w)];
      std::lock_guard<std::mutex> g(q.m);
      q.dq.push_front(std::move(t));
    }
    activity_.fetch_add(1, std::memory_order_relaxed);
    parkCv_.notify_one();
  }

  std::unique_ptr<Task> tryAcquire(WorkerCtx& ctx) {
    Queue& own = *queues_[static_cast<size_t>(ctx.id)];
    {
      std::lock_guard<std::mutex> g(own.m);
      if (!own.dq.empty()) {
        auto t = std::move(own.dq.front());
        own.dq.pop_front();
        return t;
      }
    }
    int n = cfg_.nWorkers;
    int start = cfg_.seed ? static_cast<int>(ctx.rng() % n) : (ctx.id + 1) % n;
    for (int k = 0; k < n; ++k) {
      int v = (start + k) % n;
      if (v == ctx.id) continue;
      Queue& q = *queues_[static_cast<size_t>(v)];
      std::lock_guard<std::mutex> g(q.m);
      if (!q.dq.empty()) {
        auto t = std::move(q.dq.back());  // FIFO steal
        q.dq.pop_back();
        return t;
      }
    }
    return nullptr;
  }

  bool queuesEmpty() {
    for (auto& q : queues_) {
      std::lock_guard<std::mutex> g(q->m);
      if (!q->dq.empty()) return false;
    }
    return true;
  }

  // --- parking and deadlock detection ---------------------------------------

  // One bounded wait in the parked state; detects global quiescence when
  // nothing has happened for many strikes in a row.
  void park(int& strikes, uint64_t& lastActivity) {
    std::unique_lock<std::mutex> lk(parkM_);
    parkCv_.wait_for(lk, std::chrono::milliseconds(2));
    if (rootDone_ || shutdown_.load() || aborted_.load()) return;
    uint64_t act = activity_.load(std::memory_order_relaxed);
    if (act != lastActivity) {
      lastActivity = act;
      strikes = 0;
      return;
    }
    ++strikes;
    if (strikes < 64) return;
    // Everyone parked, nothing queued, nothing happened: stuck.
    if (idle_.load(std::memory_order_relaxed) == cfg_.nWorkers) {
      lk.unlock();
      bool empty = queuesEmpty();
      lk.lock();
      if (empty && !rootDone_)
        throw EngineAbort{
            "deadlock: all workers blocked and no task is runnable"};
    }
  }

  void doAbort(const std::string& msg) {
    {
      std::lock_guard<std::mutex> g(parkM_);
      if (!aborted_.exchange(true)) abortMessage_ = msg;
    }
    parkCv_.notify_all();
  }

  void checkAborted() {
    if (aborted_.load(std::memory_order_relaxed))
      throw EngineAbort{"aborted"};
  }

  void workerLoop(int id) {
    WorkerCtx ctx;
    ctx.id = id;
    ctx.rng.seed(cfg_.seed ^ (0x9e3779b97f4a7c15ull * (id + 1)));
    tls_ = &ctx;
    int strikes = 0;
    uint64_t lastActivity = 0;
    try {
      while (!shutdown_.load()) {
        auto t = tryAcquire(ctx);
        if (t) {
          becomeBusy(ctx);
          strikes = 0;
          runTask(ctx, std::move(t));
          continue;
        }
        becomeIdle(ctx);
        park(strikes, lastActivity);
      }
    } catch (const EngineAbort& a) {
      doAbort(a.message);
    }
    becomeBusy(ctx);
    tls_ = nullptr;
  }

  void helpUntil(WorkerCtx& ctx, const std::function<bool()>& pred) {
    int strikes = 0;
    uint64_t lastActivity = 0;
    for (;;) {
      checkAborted();
      if (pred()) {
        becomeBusy(ctx);
        return;
      }
      auto t = tryAcquire(ctx);
      if (t) {
        becomeBusy(ctx);
        strikes = 0;
        runTask(ctx, std::move(t));
        continue;
      }
      becomeIdle(ctx);
      if (pred()) {
        becomeBusy(ctx);
        return;
      }
      park(strikes, lastActivity);
    }
  }

  // --- task lifecycle --------------------------------------------------------

  void runTask(WorkerCtx& ctx, std::unique_ptr<Task> t) {
    jitter(ctx);
    EvalEnv env = makeEnv(*t);
    ExcRef syncExc;
    try {
      exec(t->body, *t, env);
    } catch (FinchThrow& ft) {
      syncExc = ft.exc;
    }
    if (t->isRoot) {
      finishRoot(ctx, *t, syncExc);
      return;
    }
    if (syncExc) t->scope->add_exc(syncExc);
    for (Clock* c : t->clocks) deregisterClock(c);
    t->scope->pending.fetch_sub(1, std::memory_order_acq_rel);
    activity_.fetch_add(1, std::memory_order_relaxed);
    parkCv_.notify_all();
  }

  // Quiesce stray tasks, then settle the outcome: a synchronous exception
  // passes through bare; stray task failures aggregate into one
  // MultipleExceptions.
  void finishRoot(WorkerCtx& ctx, Task& t, const ExcRef& syncExc) {
    for (Clock* c : t.clocks) deregisterClock(c);
    helpUntil(ctx, [&] {
      return t.scope->pending.load(std::memory_order_acquire) == 0;
    });
    std::vector<ExcRef> excs;
    {
      std::lock_guard<std::mutex> g(t.scope->m);
      excs = t.scope->excs;
    }
    {
      std::lock_guard<std::mutex> g(parkM_);
      if (syncExc)
        rootExc_ = syncExc;
      else if (!excs.empty())
        rootExc_ = make_multi_exc(excs);
      rootFrame_ = t.frame;
      rootDone_ = true;
    }
    parkCv_.notify_all();
  }

  void jitter(WorkerCtx& ctx) {
    if (!cfg_.seed) return;
    uint64_t r = ctx.rng();
    if ((r & 7) == 0) std::this_thread::yield();
    if ((r & 63) == 1)
      std::this_thread::sleep_for(std::chrono::microseconds(r % 37));
  }

  // --- clocks -----------------------------------------------------------------

  void registerClock(Clock* c) {
    std::lock_guard<std::mutex> g(parkM_);
    c->registered += 1;
  }

  void deregisterClock(Clock* c) {
    {
      std::lock_guard<std::mutex> g(parkM_);
      c->registered -= 1;
      releaseIfReady(*c);
    }
    activity_.fetch_add(1, std::memory_order_relaxed);
    parkCv_.notify_all();
  }

  void releaseIfReady(Clock& c) {
    if (c.registered > 0 && c.arrived == c.registered) {
      c.arrived = 0;
      c.generation += 1;
      activity_.fetch_add(1, std::memory_order_relaxed);
    }
  }

  void advanceAll(WorkerCtx& ctx, Task& t) {
    advances_.fetch_add(1, std::memory_order_relaxed);
    if (t.clocks.empty()) return;
    std::vector<std::pair<Clock*, uint64_t>> waits;
    {
      std::lock_guard<std::mutex> g(parkM_);
      for (Clock* c : t.clocks) {
        uint64_t gen = c->generation;
        c->arrived += 1;
        releaseIfReady(*c);
        if (c->generation == gen) waits.emplace_back(c, gen);
      }
    }
    parkCv_.notify_all();
    for (auto& [c, gen] : waits) {
      helpUntil(ctx, [this, c = c, gen = gen] {
        std::lock_guard<std::mutex> lk(parkM_);
        return c->generation > gen;
      });
    }
  }

  // A task blocked at a join resigns from its clocks so peers can advance
  // without it, and re-registers once the join completes.
  void joinScope(WorkerCtx& ctx, Task& t, FinishScope& scope) {
    if (scope.pending.load(std::memory_order_acquire) == 0) return;
    for (Clock* c : t.clocks) deregisterClock(c);
    helpUntil(ctx, [&] {
      return scope.pending.load(std::memory_order_acquire) == 0;
    });
    for (Clock* c : t.clocks) registerClock(c);
  }

  // --- statement execution ----------------------------------------------------

  long long readIdle() {
    long long call = idleCalls_.fetch_add(1, std::memory_order_relaxed);
    if (cfg_.idleHook) return cfg_.idleHook(call);
    return idle_.load(std::memory_order_relaxed);
  }

  EvalEnv makeEnv(Task& t) {
    EvalEnv env;
    env.frame = &t.frame;  // stable: calls swap contents, not the object
    env.readGlobal = [this](const std::string& n) -> Value {
      std::lock_guard<std::mutex> g(globalsM_);
      auto it = globals_.find(n);
      if (it == globals_.end()) throw fault("UnboundGlobal");
      return it->second;
    };
    env.idleWorkers = [this] { return readIdle(); };
    env.nthreads = [this] { return static_cast<long long>(cfg_.nWorkers); };
    env.arrayLoad = [](const ArrayRef& a, long long i) {
      return std::atomic_ref<long long>(a->elems[static_cast<size_t>(i)])
          .load(std::memory_order_relaxed);
    };
    return env;
  }

  void recordWrite(const std::string& array, long long idx, long long v) {
    if (!cfg_.trace) return;
    uint64_t seq = traceSeq_.fetch_add(1, std::memory_order_relaxed);
    std::lock_guard<std::mutex> g(traceM_);
    if (trace_.size() < cfg_.traceCapacity)
      trace_.push_back({seq, array, idx, v});
  }

  Flow exec(const StmtPtr& s, Task& t, EvalEnv& env) {
    checkAborted();
    switch (s->kind) {
      case StmtKind::Skip:
        return Flow::Normal;
      case StmtKind::Seq:
        for (const auto& c : s->stmts)
          if (exec(c, t, env) == Flow::Returned) return Flow::Returned;
        return Flow::Normal;
      case StmtKind::Assign: {
        Value v = eval(s->expr, env);
        if (s->lhsIndex) {
          ArrayRef arr = as_array(read_var(env, s->lhsName));
          long long idx = as_int(eval(s->lhsIndex, env));
          if (idx < 0 || idx >= static_cast<long long>(arr->elems.size()))
            throw fault("IndexOutOfBounds");
          long long iv = as_int(v);
          std::atomic_ref<long long>(arr->elems[static_cast<size_t>(idx)])
              .store(iv, std::memory_order_relaxed);
          recordWrite(s->lhsName, idx, iv);
        } else if (is_global_name(s->lhsName)) {
          std::lock_guard<std::mutex> g(globalsM_);
          globals_[s->lhsName] = v;
        } else {
          t.frame[s->lhsName] = v;
        }
        return Flow::Normal;
      }
      case StmtKind::Finish: {
        if (s->synthetic)
          synFinishes_.fetch_add(1, std::memory_order_relaxed);
        else
          finishes_.fetch_add(1, std::memory_order_relaxed);
        FinishScope scope;
        FinishScope* prev = t.scope;
        t.scope = &scope;
        Flow flow = Flow::Normal;
        try {
          flow = exec(s->body, t, env);
        } catch (FinchThrow& ft) {
          scope.add_exc(ft.exc);
        }
        t.scope = prev;
        joinScope(*tls_, t, scope);
        {
          std::lock_guard<std::mutex> g(scope.m);
          if (!scope.excs.empty())
            throw FinchThrow{make_multi_exc(scope.excs)};
        }
        return flow;
      }
      case StmtKind::Async: {
        asyncs_.fetch_add(1, std::memory_order_relaxed);
        auto task = std::make_unique<Task>();
        task->body = s->body;
        task->frame = t.frame;  // scalar snapshot; arrays stay shared
        task->scope = t.scope;
        t.scope->pending.fetch_add(1, std::memory_order_acq_rel);
        for (const auto& cn : s->clocks) {
          Clock* c = &clocks_.at(cn);
          registerClock(c);
          task->clocks.push_back(c);
        }
        push(tls_->id, std::move(task));
        return Flow::Normal;
      }
      case StmtKind::For: {
        if (s->init && exec(s->init, t, env) == Flow::Returned)
          return Flow::Returned;
        for (;;) {
          if (!as_bool(eval(s->expr, env))) break;
          if (exec(s->body, t, env) == Flow::Returned) return Flow::Returned;
          if (s->step && exec(s->step, t, env) == Flow::Returned)
            return Flow::Returned;
        }
        return Flow::Normal;
      }
      case StmtKind::While: {
        while (as_bool(eval(s->expr, env))) {
          if (exec(s->body, t, env) == Flow::Returned) return Flow::Returned;
        }
        return Flow::Normal;
      }
      case StmtKind::If: {
        if (as_bool(eval(s->expr, env))) return exec(s->body, t, env);
        if (s->elseBody) return exec(s->elseBody, t, env);
        return Flow::Normal;
      }
      case StmtKind::Switch: {
        long long v = as_int(eval(s->expr, env));
        size_t start = s->cases.size();
        for (size_t i = 0; i < s->cases.size(); ++i) {
          if (!s->cases[i].isDefault && s->cases[i].value == v) {
            start = i;
            break;
          }
        }
        if (start == s->cases.size())
          for (size_t i = 0; i < s->cases.size(); ++i)
            if (s->cases[i].isDefault) {
              start = i;
              break;
            }
        for (size_t i = start; i < s->cases.size(); ++i)
          if (exec(s->cases[i].body, t, env) == Flow::Returned)
            return Flow::Returned;
        return Flow::Normal;
      }
      case StmtKind::TryCatch: {
        try {
          return exec(s->body, t, env);
        } catch (FinchThrow& ft) {
          if (!catches(s->catchTag, ft.exc)) throw;
          t.frame[s->catchVar] = ft.exc;
          return exec(s->elseBody, t, env);
        }
      }
      case StmtKind::Throw: {
        Value v = eval(s->expr, env);
        const ExcRef* er = std::get_if<ExcRef>(&v);
        if (!er || !*er) throw fault("NullThrow");
        throw FinchThrow{*er};
      }
      case StmtKind::AdvanceAll:
        advanceAll(*tls_, t);
        return Flow::Normal;
      case StmtKind::Call: {
        const Method* callee = prog_.find(s->target);
        if (!callee) throw fault("UnknownMethod");
        std::vector<Value> args;
        for (const auto& a : s->args) args.push_back(eval(a, env));
        Frame saved = std::move(t.frame);
        t.frame = bind_params(*callee, args);
        try {
          exec(callee->body, t, env);
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

inline thread_local Engine::WorkerCtx* Engine::tls_ = nullptr;

}  // namespace rt

inline RunResult run(const Program& p, const RuntimeConfig& cfg,
                     const std::vector<Value>& input) {
  rt::Engine engine(p, cfg);
  return engine.run(input);
}

}  // namespace finch
