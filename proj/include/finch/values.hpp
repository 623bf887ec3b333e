// Runtime values, frames, exception objects, the store checksum and the
// expression evaluator shared by both execution engines.
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "finch/ast.hpp"

namespace finch {

struct ArrayObj {
  std::vector<long long> elems;
};
using ArrayRef = std::shared_ptr<ArrayObj>;

struct ExcObj;
using ExcRef = std::shared_ptr<const ExcObj>;

struct ExcObj {
  bool multi = false;
  std::string tag;                // plain kind
  std::vector<ExcRef> children;   // MultipleExceptions payload
};

inline ExcRef make_plain_exc(std::string tag) {
  auto e = std::make_shared<ExcObj>();
  e->tag = std::move(tag);
  return e;
}

inline ExcRef make_multi_exc(std::vector<ExcRef> children) {
  auto e = std::make_shared<ExcObj>();
  e->multi = true;
  e->children = std::move(children);
  return e;
}

// Canonical form: plain kinds by tag, MultipleExceptions as an unordered
// multiset of children, nesting preserved.
inline std::string normalize_exc(const ExcRef& e) {
  if (!e) return "-";
  if (!e->multi) return "P(" + e->tag + ")";
  std::vector<std::string> kids;
  for (const auto& c : e->children) kids.push_back(normalize_exc(c));
  std::sort(kids.begin(), kids.end());
  std::string out = "M[";
  for (const auto& k : kids) out += k + ",";
  return out + "]";
}

inline bool exc_equal(const ExcRef& a, const ExcRef& b) {
  return normalize_exc(a) == normalize_exc(b);
}

// Uninitialised reads are faults; null lives as an empty ExcRef.
using Value = std::variant<std::monostate, long long, bool, ArrayRef, ExcRef>;

using Frame = std::map<std::string, Value>;

// A Finch exception in flight inside either engine.
struct FinchThrow {
  ExcRef exc;
};

// Unrecoverable engine conditions (deadlock, cap overruns).
struct EngineAbort {
  std::string message;
};

inline FinchThrow fault(const char* what) {
  return FinchThrow{make_plain_exc(std::string("__Fault_") + what)};
}

// ---------------------------------------------------------------------------
// Store checksum
// ---------------------------------------------------------------------------

// FNV-1a over the entry frame's arrays (compiler temporaries excluded),
// names sorted for determinism. Scalars stay out: loop counters legitimately
// differ across optimisation levels, results live in arrays.
inline uint64_t checksum_store(const Frame& entryFrame) {
  uint64_t h = 1469598103934665603ull;
  auto fold = [&](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (i * 8)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  auto foldStr = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
    fold(0x7f);
  };
  for (const auto& [name, val] : entryFrame) {
    if (is_temp_name(name)) continue;
    const ArrayRef* arr = std::get_if<ArrayRef>(&val);
    if (!arr || !*arr) continue;
    foldStr(name);
    fold((*arr)->elems.size());
    for (long long x : (*arr)->elems) fold(static_cast<uint64_t>(x));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Expression evaluation
// ---------------------------------------------------------------------------

// Engine-specific bits the evaluator needs. Array element access goes through
// the hook so the concurrent engine can use atomic accesses.
struct EvalEnv {
  Frame* frame = nullptr;
  std::function<Value(const std::string&)> readGlobal;     // exception slots
  std::function<long long()> idleWorkers;
  std::function<long long()> nthreads;
  std::function<long long(const ArrayRef&, long long)> arrayLoad;
};

inline bool is_global_name(const std::string& n) {
  static const std::string prefix = std::string(1, kTempPrefix) + "gex";
  return n.rfind(prefix, 0) == 0;
}

inline Value read_var(const EvalEnv& env, const std::string& name) {
  if (is_global_name(name)) return env.readGlobal(name);
  auto it = env.frame->find(name);
  if (it == env.frame->end() || std::holds_alternative<std::monostate>(it->second))
    throw fault("UnboundVariable");
  return it->second;
}

inline long long as_int(const Value& v) {
  if (const long long* i = std::get_if<long long>(&v)) return *i;
  throw fault("TypeError");
}

inline bool as_bool(const Value& v) {
  if (const bool* b = std::get_if<bool>(&v)) return *b;
  throw fault("TypeError");
}

inline ArrayRef as_array(const Value& v) {
  if (const ArrayRef* a = std::get_if<ArrayRef>(&v)) {
    if (*a) return *a;
  }
  throw fault("TypeError");
}

inline Value eval(const ExprPtr& e, const EvalEnv& env) {
  switch (e->kind) {
    case ExprKind::IntLit: return e->intVal;
    case ExprKind::BoolLit: return e->boolVal;
    case ExprKind::NullLit: return ExcRef{};
    case ExprKind::Var: return read_var(env, e->name);
    case ExprKind::ArrayRead: {
      ArrayRef arr = as_array(read_var(env, e->name));
      long long idx = as_int(eval(e->lhs, env));
      if (idx < 0 || idx >= static_cast<long long>(arr->elems.size()))
        throw fault("IndexOutOfBounds");
      return env.arrayLoad(arr, idx);
    }
    case ExprKind::Unary: {
      Value v = eval(e->lhs, env);
      if (e->uop == UnOp::Neg) return -as_int(v);
      return !as_bool(v);
    }
    case ExprKind::Binary: {
      // Short-circuit logic first.
      if (e->bop == BinOp::And) {
        if (!as_bool(eval(e->lhs, env))) return false;
        return as_bool(eval(e->rhs, env));
      }
      if (e->bop == BinOp::Or) {
        if (as_bool(eval(e->lhs, env))) return true;
        return as_bool(eval(e->rhs, env));
      }
      Value a = eval(e->lhs, env);
      Value b = eval(e->rhs, env);
      if (e->bop == BinOp::Eq || e->bop == BinOp::Ne) {
        bool eq;
        if (std::holds_alternative<ExcRef>(a) || std::holds_alternative<ExcRef>(b)) {
          const ExcRef* ea = std::get_if<ExcRef>(&a);
          const ExcRef* eb = std::get_if<ExcRef>(&b);
          if (!ea || !eb) throw fault("TypeError");
          eq = ea->get() == eb->get();  // identity; null == null
        } else if (std::holds_alternative<bool>(a)) {
          eq = as_bool(a) == as_bool(b);
        } else {
          eq = as_int(a) == as_int(b);
        }
        return e->bop == BinOp::Eq ? eq : !eq;
      }
      long long x = as_int(a), y = as_int(b);
      switch (e->bop) {
        case BinOp::Add: return x + y;
        case BinOp::Sub: return x - y;
        case BinOp::Mul: return x * y;
        case BinOp::Div:
          if (y == 0) throw fault("DivideByZero");
          return x / y;
        case BinOp::Mod:
          if (y == 0) throw fault("DivideByZero");
          return x % y;
        case BinOp::Lt: return x < y;
        case BinOp::Le: return x <= y;
        case BinOp::Gt: return x > y;
        case BinOp::Ge: return x >= y;
        default: throw fault("TypeError");
      }
    }
    case ExprKind::Builtin:
      if (e->name == builtin_idle_workers()) return env.idleWorkers();
      return env.nthreads();
    case ExprKind::NewArray: {
      long long n = as_int(eval(e->lhs, env));
      if (n < 0) throw fault("NegativeArraySize");
      auto arr = std::make_shared<ArrayObj>();
      arr->elems.assign(static_cast<size_t>(n), 0);
      return arr;
    }
    case ExprKind::NewExc: return make_plain_exc(e->name);
    case ExprKind::NewMulti: {
      Value inner = eval(e->lhs, env);
      const ExcRef* er = std::get_if<ExcRef>(&inner);
      if (!er || !*er) throw fault("NullWrap");
      return make_multi_exc({*er});
    }
  }
  throw fault("BadExpr");
}

// Binds call arguments to parameter names; kinds are dynamic, the declared
// kind only drives diagnostics elsewhere.
inline Frame bind_params(const Method& m, const std::vector<Value>& args) {
  Frame f;
  for (size_t i = 0; i < m.params.size(); ++i)
    f[m.params[i].first] = i < args.size() ? args[i] : Value{};
  return f;
}

inline bool catches(const std::string& catchTag, const ExcRef& exc) {
  if (catchTag == kCatchAll) return true;
  return !exc->multi && exc->tag == catchTag;
}

}  // namespace finch
