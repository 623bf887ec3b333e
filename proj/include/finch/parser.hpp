// Recursive-descent parser for .finch sources. Stops at the first syntax
// error; well-formedness diagnostics are forwarded into the result.
#pragma once

#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "finch/ast.hpp"

namespace finch {

struct SourceFile {
  std::string path;
  std::string text;
};

struct ParseResult {
  std::optional<Program> program;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return program.has_value() && diagnostics.empty(); }
};

namespace detail {

enum class Tok {
  End,
  Ident,
  Int,
  Punct,  // one of ( ) { } [ ] , ; :
  Op,     // operators
};

struct Token {
  Tok kind = Tok::End;
  std::string text;
  long long intVal = 0;
  SrcLoc loc;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) {}

  Token next() {
    skipWs();
    Token t;
    t.loc = {line_, col_};
    if (pos_ >= src_.size()) return t;
    char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$') {
      t.kind = Tok::Ident;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
              src_[pos_] == '_' || src_[pos_] == '$'))
        t.text += get();
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      t.kind = Tok::Int;
      std::string digits;
      while (pos_ < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_])))
        digits += get();
      t.intVal = std::stoll(digits);
      t.text = digits;
      return t;
    }
    auto two = [&](const char* op) {
      if (src_.compare(pos_, 2, op) == 0) {
        t.kind = Tok::Op;
        t.text = op;
        get();
        get();
        return true;
      }
      return false;
    };
    if (two("==") || two("!=") || two("<=") || two(">=") || two("&&") ||
        two("||"))
      return t;
    if (std::string("+-*/%<>=!").find(c) != std::string::npos) {
      t.kind = Tok::Op;
      t.text = std::string(1, get());
      return t;
    }
    if (std::string("(){}[],;:").find(c) != std::string::npos) {
      t.kind = Tok::Punct;
      t.text = std::string(1, get());
      return t;
    }
    throw ParseFail{{line_, col_}, std::string("unexpected character '") + c + "'"};
  }

  struct ParseFail {
    SrcLoc loc;
    std::string message;
  };

 private:
  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;

  char get() {
    char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  void skipWs() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else if (c == '/' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '/') {
        while (pos_ < src_.size() && src_[pos_] != '\n') get();
      } else {
        break;
      }
    }
  }
};

class Parser {
 public:
  explicit Parser(const SourceFile& src) : lex_(src.text) { advance(); }

  Program parseProgram() {
    Program p;
    while (cur_.kind != Tok::End) {
      expectIdent("def");
      p.methods.push_back(parseMethod());
    }
    p.entry = "main";
    return p;
  }

  using ParseFail = Lexer::ParseFail;

 private:
  Lexer lex_;
  Token cur_;

  void advance() { cur_ = lex_.next(); }

  [[noreturn]] void fail(const std::string& msg) {
    throw ParseFail{cur_.loc, msg};
  }

  bool isIdent(const char* kw) const {
    return cur_.kind == Tok::Ident && cur_.text == kw;
  }

  bool acceptIdent(const char* kw) {
    if (isIdent(kw)) {
      advance();
      return true;
    }
    return false;
  }

  void expectIdent(const char* kw) {
    if (!acceptIdent(kw)) fail(std::string("expected '") + kw + "'");
  }

  bool acceptPunct(const char* p) {
    if (cur_.kind == Tok::Punct && cur_.text == p) {
      advance();
      return true;
    }
    return false;
  }

  void expectPunct(const char* p) {
    if (!acceptPunct(p)) fail(std::string("expected '") + p + "'");
  }

  bool acceptOp(const char* op) {
    if (cur_.kind == Tok::Op && cur_.text == op) {
      advance();
      return true;
    }
    return false;
  }

  std::string expectAnyIdent(const char* what) {
    if (cur_.kind != Tok::Ident) fail(std::string("expected ") + what);
    std::string s = cur_.text;
    advance();
    return s;
  }

  Method parseMethod() {
    Method m;
    m.name = expectAnyIdent("method name");
    expectPunct("(");
    if (!acceptPunct(")")) {
      do {
        std::string pname = expectAnyIdent("parameter name");
        expectPunct(":");
        std::string k = expectAnyIdent("value kind");
        ValueKind vk;
        if (k == "int")
          vk = ValueKind::Int;
        else if (k == "bool")
          vk = ValueKind::Bool;
        else if (k == "array")
          vk = ValueKind::Array;
        else if (k == "exc")
          vk = ValueKind::Exc;
        else
          fail("unknown value kind '" + k + "'");
        m.params.emplace_back(pname, vk);
      } while (acceptPunct(","));
      expectPunct(")");
    }
    if (acceptIdent("slot")) {
      expectPunct("(");
      m.exceptionSlot = expectAnyIdent("slot name");
      expectPunct(")");
    }
    m.body = parseBlock();
    return m;
  }

  StmtPtr parseBlock() {
    expectPunct("{");
    std::vector<StmtPtr> items;
    while (!acceptPunct("}")) {
      if (cur_.kind == Tok::End) fail("unexpected end of input in block");
      items.push_back(parseStmt());
    }
    return mk::seq(std::move(items));
  }

  StmtPtr parseStmt() {
    SrcLoc loc = cur_.loc;
    StmtPtr s = parseStmtInner();
    // Node location: keep the first token's position.
    const_cast<Stmt*>(s.get())->loc = loc;
    return s;
  }

  StmtPtr parseStmtInner() {
    if (cur_.kind == Tok::Punct && cur_.text == "{") return parseBlock();
    if (acceptIdent("skip")) {
      expectPunct(";");
      return mk::skip();
    }
    if (acceptIdent("finish")) {
      StmtPtr body = parseStmt();
      std::vector<std::string> pending;
      if (acceptIdent("pending")) {
        expectPunct("(");
        do {
          pending.push_back(expectAnyIdent("pending variable"));
        } while (acceptPunct(","));
        expectPunct(")");
      }
      return mk::finish(std::move(body), std::move(pending));
    }
    if (acceptIdent("async")) {
      std::vector<std::string> clocks;
      if (acceptIdent("clocked")) {
        expectPunct("(");
        do {
          clocks.push_back(expectAnyIdent("clock name"));
        } while (acceptPunct(","));
        expectPunct(")");
      }
      StmtPtr body = parseStmt();
      return mk::async(std::move(body), std::move(clocks));
    }
    if (acceptIdent("for")) {
      expectPunct("(");
      StmtPtr init;
      if (!acceptPunct(";")) {
        init = parseSimpleAssign();
        expectPunct(";");
      }
      ExprPtr cond;
      if (!(cur_.kind == Tok::Punct && cur_.text == ";")) cond = parseExpr();
      expectPunct(";");
      StmtPtr step;
      if (!(cur_.kind == Tok::Punct && cur_.text == ")")) step = parseSimpleAssign();
      expectPunct(")");
      StmtPtr body = parseStmt();
      if (!cond) cond = mk::bool_lit(true);
      return mk::for_loop(std::move(init), std::move(cond), std::move(step),
                          std::move(body));
    }
    if (acceptIdent("while")) {
      expectPunct("(");
      ExprPtr cond = parseExpr();
      expectPunct(")");
      return mk::while_loop(std::move(cond), parseStmt());
    }
    if (acceptIdent("if")) {
      expectPunct("(");
      ExprPtr cond = parseExpr();
      expectPunct(")");
      StmtPtr then = parseStmt();
      StmtPtr els;
      if (acceptIdent("else")) els = parseStmt();
      return mk::if_stmt(std::move(cond), std::move(then), std::move(els));
    }
    if (acceptIdent("switch")) {
      expectPunct("(");
      ExprPtr scrut = parseExpr();
      expectPunct(")");
      expectPunct("{");
      std::vector<SwitchCase> cases;
      bool sawDefault = false;
      while (!acceptPunct("}")) {
        SwitchCase c;
        if (acceptIdent("case")) {
          bool neg = acceptOp("-");
          if (cur_.kind != Tok::Int) fail("expected case value");
          c.value = neg ? -cur_.intVal : cur_.intVal;
          advance();
        } else if (acceptIdent("default")) {
          if (sawDefault) fail("multiple default cases");
          c.isDefault = true;
          sawDefault = true;
        } else {
          fail("expected 'case' or 'default'");
        }
        expectPunct(":");
        std::vector<StmtPtr> body;
        while (!(cur_.kind == Tok::Punct && cur_.text == "}") &&
               !isIdent("case") && !isIdent("default")) {
          if (cur_.kind == Tok::End) fail("unexpected end of input in switch");
          body.push_back(parseStmt());
        }
        c.body = mk::seq(std::move(body));
        if (c.isDefault && !(cur_.kind == Tok::Punct && cur_.text == "}"))
          fail("default case must come last");
        cases.push_back(std::move(c));
      }
      return mk::switch_stmt(std::move(scrut), std::move(cases));
    }
    if (acceptIdent("try")) {
      StmtPtr body = parseStmt();
      expectIdent("catch");
      expectPunct("(");
      std::string var = expectAnyIdent("catch variable");
      expectPunct(":");
      std::string tag = expectAnyIdent("exception kind");
      expectPunct(")");
      StmtPtr handler = parseStmt();
      return mk::try_catch(std::move(body), std::move(var), std::move(tag),
                           std::move(handler));
    }
    if (acceptIdent("throw")) {
      ExprPtr v = parseExpr();
      expectPunct(";");
      return mk::throw_stmt(std::move(v));
    }
    if (acceptIdent("advanceAll")) {
      expectPunct(";");
      return mk::advance_all();
    }
    if (acceptIdent("return")) {
      expectPunct(";");
      return mk::ret();
    }
    // Call or assignment.
    if (cur_.kind == Tok::Ident) {
      std::string name = cur_.text;
      advance();
      if (acceptPunct("(")) {
        std::vector<ExprPtr> args;
        if (!acceptPunct(")")) {
          do {
            args.push_back(parseExpr());
          } while (acceptPunct(","));
          expectPunct(")");
        }
        expectPunct(";");
        return mk::call(std::move(name), std::move(args));
      }
      StmtPtr s = parseAssignTail(std::move(name));
      expectPunct(";");
      return s;
    }
    fail("expected statement");
  }

  StmtPtr parseSimpleAssign() {
    std::string name = expectAnyIdent("assignment target");
    return parseAssignTail(std::move(name));
  }

  StmtPtr parseAssignTail(std::string name) {
    ExprPtr idx;
    if (acceptPunct("[")) {
      idx = parseExpr();
      expectPunct("]");
    }
    if (!acceptOp("=")) fail("expected '='");
    ExprPtr rhs = parseExpr();
    if (idx) return mk::array_assign(std::move(name), std::move(idx), std::move(rhs));
    return mk::assign(std::move(name), std::move(rhs));
  }

  // Expressions, precedence-climbing.
  ExprPtr parseExpr() { return parseBin(1); }

  int curBinPrec(BinOp& op) {
    if (cur_.kind != Tok::Op) return 0;
    const std::string& t = cur_.text;
    if (t == "||") { op = BinOp::Or; return 1; }
    if (t == "&&") { op = BinOp::And; return 2; }
    if (t == "==") { op = BinOp::Eq; return 3; }
    if (t == "!=") { op = BinOp::Ne; return 3; }
    if (t == "<") { op = BinOp::Lt; return 4; }
    if (t == "<=") { op = BinOp::Le; return 4; }
    if (t == ">") { op = BinOp::Gt; return 4; }
    if (t == ">=") { op = BinOp::Ge; return 4; }
    if (t == "+") { op = BinOp::Add; return 5; }
    if (t == "-") { op = BinOp::Sub; return 5; }
    if (t == "*") { op = BinOp::Mul; return 6; }
    if (t == "/") { op = BinOp::Div; return 6; }
    if (t == "%") { op = BinOp::Mod; return 6; }
    return 0;
  }

  ExprPtr parseBin(int minPrec) {
    ExprPtr lhs = parseUnary();
    for (;;) {
      BinOp op;
      int p = curBinPrec(op);
      if (p == 0 || p < minPrec) return lhs;
      advance();
      ExprPtr rhs = parseBin(p + 1);  // left-assoc
      lhs = mk::binary(op, std::move(lhs), std::move(rhs));
    }
  }

  ExprPtr parseUnary() {
    if (acceptOp("-")) {
      ExprPtr inner = parseUnary();
      if (inner->kind == ExprKind::IntLit) return mk::int_lit(-inner->intVal);
      return mk::unary(UnOp::Neg, std::move(inner));
    }
    if (acceptOp("!")) return mk::unary(UnOp::Not, parseUnary());
    return parsePrimary();
  }

  ExprPtr parsePrimary() {
    if (cur_.kind == Tok::Int) {
      long long v = cur_.intVal;
      advance();
      return mk::int_lit(v);
    }
    if (acceptPunct("(")) {
      ExprPtr e = parseExpr();
      expectPunct(")");
      return e;
    }
    if (acceptIdent("true")) return mk::bool_lit(true);
    if (acceptIdent("false")) return mk::bool_lit(false);
    if (acceptIdent("null")) return mk::null_lit();
    if (acceptIdent("newarray")) {
      expectPunct("(");
      ExprPtr size = parseExpr();
      expectPunct(")");
      return mk::new_array(std::move(size));
    }
    if (acceptIdent("new")) {
      std::string tag = expectAnyIdent("exception kind");
      if (tag == "ME") {
        expectPunct("(");
        ExprPtr inner = parseExpr();
        expectPunct(")");
        return mk::new_multi(std::move(inner));
      }
      return mk::new_exc(std::move(tag));
    }
    if (cur_.kind == Tok::Ident) {
      std::string name = cur_.text;
      advance();
      if (acceptPunct("(")) {
        expectPunct(")");
        if (name != builtin_idle_workers() && name != builtin_nthreads())
          fail("unknown builtin '" + name + "' (calls are statements)");
        return mk::builtin(std::move(name));
      }
      if (acceptPunct("[")) {
        ExprPtr idx = parseExpr();
        expectPunct("]");
        return mk::array_read(std::move(name), std::move(idx));
      }
      return mk::var(std::move(name));
    }
    fail("expected expression");
  }
};

}  // namespace detail

inline ParseResult parse(const SourceFile& src) {
  ParseResult r;
  try {
    detail::Parser parser(src);
    Program p = parser.parseProgram();
    auto diags = well_formed(p);
    r.diagnostics = diags;
    r.program = std::move(p);
  } catch (const detail::Lexer::ParseFail& f) {
    r.diagnostics.push_back({f.loc, f.message});
  }
  return r;
}

inline ParseResult parse_text(const std::string& text,
                              const std::string& path = "<memory>") {
  return parse(SourceFile{path, text});
}

}  // namespace finch
