// Canonical text rendering of Finch programs; parse(pretty(p)) is structurally
// equal to p and the output doubles as the golden-file format.
#pragma once

#include <sstream>
#include <string>

#include "finch/ast.hpp"

namespace finch {

namespace detail {

// Higher binds tighter. Mirrors the parser's precedence table.
inline int prec_of(BinOp op) {
  switch (op) {
    case BinOp::Or: return 1;
    case BinOp::And: return 2;
    case BinOp::Eq:
    case BinOp::Ne: return 3;
    case BinOp::Lt:
    case BinOp::Le:
    case BinOp::Gt:
    case BinOp::Ge: return 4;
    case BinOp::Add:
    case BinOp::Sub: return 5;
    case BinOp::Mul:
    case BinOp::Div:
    case BinOp::Mod: return 6;
  }
  return 0;
}

inline const char* op_text(BinOp op) {
  switch (op) {
    case BinOp::Add: return "+";
    case BinOp::Sub: return "-";
    case BinOp::Mul: return "*";
    case BinOp::Div: return "/";
    case BinOp::Mod: return "%";
    case BinOp::Lt: return "<";
    case BinOp::Le: return "<=";
    case BinOp::Gt: return ">";
    case BinOp::Ge: return ">=";
    case BinOp::Eq: return "==";
    case BinOp::Ne: return "!=";
    case BinOp::And: return "&&";
    case BinOp::Or: return "||";
  }
  return "?";
}

class Printer {
 public:
  std::string run(const Program& p) {
    for (size_t i = 0; i < p.methods.size(); ++i) {
      if (i) out_ << "\n";
      method(p.methods[i]);
    }
    return out_.str();
  }

  std::string run(const StmtPtr& s) {
    stmtLines(s);
    return out_.str();
  }

  std::string run(const ExprPtr& e) {
    expr(e, 0);
    return out_.str();
  }

 private:
  std::ostringstream out_;
  int indent_ = 0;

  void nl() { out_ << "\n"; }
  void pad() {
    for (int i = 0; i < indent_; ++i) out_ << "  ";
  }

  void method(const Method& m) {
    out_ << "def " << m.name << "(";
    for (size_t i = 0; i < m.params.size(); ++i) {
      if (i) out_ << ", ";
      out_ << m.params[i].first << ": " << kind_name(m.params[i].second);
    }
    out_ << ")";
    if (!m.exceptionSlot.empty()) out_ << " slot(" << m.exceptionSlot << ")";
    out_ << " ";
    block(m.body);
    nl();
  }

  void block(const StmtPtr& s) {
    out_ << "{";
    nl();
    ++indent_;
    stmtLines(s);
    --indent_;
    pad();
    out_ << "}";
  }

  // Emits a statement (or each element of a Seq) as indented lines.
  void stmtLines(const StmtPtr& s) {
    if (!s) return;
    if (s->kind == StmtKind::Seq) {
      for (const auto& c : s->stmts) stmtLines(c);
      return;
    }
    pad();
    stmt(s);
    nl();
  }

  void stmt(const StmtPtr& s) {
    switch (s->kind) {
      case StmtKind::Skip:
        out_ << "skip;";
        return;
      case StmtKind::Seq:  // only reachable as a nested block
        block(s);
        return;
      case StmtKind::Assign:
        out_ << s->lhsName;
        if (s->lhsIndex) {
          out_ << "[";
          expr(s->lhsIndex, 0);
          out_ << "]";
        }
        out_ << " = ";
        expr(s->expr, 0);
        out_ << ";";
        return;
      case StmtKind::Finish:
        out_ << "finish ";
        block(s->body);
        if (!s->pending.empty()) {
          out_ << " pending(";
          for (size_t i = 0; i < s->pending.size(); ++i) {
            if (i) out_ << ", ";
            out_ << s->pending[i];
          }
          out_ << ")";
        }
        return;
      case StmtKind::Async:
        out_ << "async ";
        if (!s->clocks.empty()) {
          out_ << "clocked(";
          for (size_t i = 0; i < s->clocks.size(); ++i) {
            if (i) out_ << ", ";
            out_ << s->clocks[i];
          }
          out_ << ") ";
        }
        block(s->body);
        return;
      case StmtKind::For:
        out_ << "for (";
        inlineStmt(s->init);
        out_ << "; ";
        if (s->expr) expr(s->expr, 0);
        out_ << "; ";
        inlineStmt(s->step);
        out_ << ") ";
        block(s->body);
        return;
      case StmtKind::While:
        out_ << "while (";
        expr(s->expr, 0);
        out_ << ") ";
        block(s->body);
        return;
      case StmtKind::If:
        out_ << "if (";
        expr(s->expr, 0);
        out_ << ") ";
        block(s->body);
        if (s->elseBody) {
          out_ << " else ";
          block(s->elseBody);
        }
        return;
      case StmtKind::Switch:
        out_ << "switch (";
        expr(s->expr, 0);
        out_ << ") {";
        nl();
        ++indent_;
        for (const auto& c : s->cases) {
          pad();
          if (c.isDefault)
            out_ << "default:";
          else
            out_ << "case " << c.value << ":";
          nl();
          ++indent_;
          stmtLines(c.body);
          --indent_;
        }
        --indent_;
        pad();
        out_ << "}";
        return;
      case StmtKind::TryCatch:
        out_ << "try ";
        block(s->body);
        out_ << " catch (" << s->catchVar << ": " << s->catchTag << ") ";
        block(s->elseBody);
        return;
      case StmtKind::Throw:
        out_ << "throw ";
        expr(s->expr, 0);
        out_ << ";";
        return;
      case StmtKind::AdvanceAll:
        out_ << "advanceAll;";
        return;
      case StmtKind::Call:
        out_ << s->target << "(";
        for (size_t i = 0; i < s->args.size(); ++i) {
          if (i) out_ << ", ";
          expr(s->args[i], 0);
        }
        out_ << ");";
        return;
      case StmtKind::Return:
        out_ << "return;";
        return;
    }
  }

  // For-loop init/step position: a single assignment or nothing.
  void inlineStmt(const StmtPtr& s) {
    if (!s || s->kind == StmtKind::Skip) return;
    if (s->kind == StmtKind::Assign) {
      out_ << s->lhsName;
      if (s->lhsIndex) {
        out_ << "[";
        expr(s->lhsIndex, 0);
        out_ << "]";
      }
      out_ << " = ";
      expr(s->expr, 0);
      return;
    }
    out_ << "/*unprintable*/";
  }

  void expr(const ExprPtr& e, int parentPrec) {
    if (!e) {
      out_ << "/*null*/";
      return;
    }
    switch (e->kind) {
      case ExprKind::IntLit:
        out_ << e->intVal;
        return;
      case ExprKind::BoolLit:
        out_ << (e->boolVal ? "true" : "false");
        return;
      case ExprKind::NullLit:
        out_ << "null";
        return;
      case ExprKind::Var:
        out_ << e->name;
        return;
      case ExprKind::ArrayRead:
        out_ << e->name << "[";
        expr(e->lhs, 0);
        out_ << "]";
        return;
      case ExprKind::Unary:
        out_ << (e->uop == UnOp::Neg ? "-" : "!");
        expr(e->lhs, 7);
        return;
      case ExprKind::Binary: {
        int p = prec_of(e->bop);
        bool parens = p < parentPrec;
        if (parens) out_ << "(";
        expr(e->lhs, p);
        out_ << " " << op_text(e->bop) << " ";
        expr(e->rhs, p + 1);  // left-assoc
        if (parens) out_ << ")";
        return;
      }
      case ExprKind::Builtin:
        out_ << e->name << "()";
        return;
      case ExprKind::NewArray:
        out_ << "newarray(";
        expr(e->lhs, 0);
        out_ << ")";
        return;
      case ExprKind::NewExc:
        out_ << "new " << e->name;
        return;
      case ExprKind::NewMulti:
        out_ << "new ME(";
        expr(e->lhs, 0);
        out_ << ")";
        return;
    }
  }
};

}  // namespace detail

inline std::string pretty(const Program& p) { return detail::Printer{}.run(p); }
inline std::string pretty(const StmtPtr& s) { return detail::Printer{}.run(s); }
inline std::string pretty(const ExprPtr& e) { return detail::Printer{}.run(e); }

}  // namespace finch
