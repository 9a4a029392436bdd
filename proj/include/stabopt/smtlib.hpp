#pragma once

#include <signal.h>
#include <sys/wait.h>
#include <time.h>
#include <unistd.h>

#include <cstring>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stabopt/lp.hpp"
#include "stabopt/rational.hpp"

namespace stabopt {
namespace smtlib {

// ---- canonical rational terms ------------------------------------------------

inline std::string format_rational(const Rational& r) {
  BigInt num = numerator(r), den = denominator(r);
  bool neg = num < 0;
  if (neg) num = -num;
  std::string body = den == 1 ? num.str() : "(/ " + num.str() + " " + den.str() + ")";
  return neg ? "(- " + body + ")" : body;
}

// ---- s-expression reader -----------------------------------------------------

struct SExpr {
  bool is_atom = false;
  std::string atom;
  std::vector<SExpr> items;
};

namespace detail {

inline void tokenize(const std::string& text, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (i < text.size()) {
    char c = text[i];
    if (c == ';') {  // line comment
      while (i < text.size() && text[i] != '\n') ++i;
    } else if (c == '(' || c == ')') {
      out.emplace_back(1, c);
      ++i;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) &&
             text[j] != '(' && text[j] != ')' && text[j] != ';')
        ++j;
      out.push_back(text.substr(i, j - i));
      i = j;
    }
  }
}

inline SExpr read_sexpr(const std::vector<std::string>& toks, std::size_t& pos) {
  if (pos >= toks.size()) throw BackendError("smtlib: unexpected end of input");
  if (toks[pos] == "(") {
    ++pos;
    SExpr e;
    while (pos < toks.size() && toks[pos] != ")") e.items.push_back(read_sexpr(toks, pos));
    if (pos >= toks.size()) throw BackendError("smtlib: unbalanced parenthesis");
    ++pos;  // consume ')'
    return e;
  }
  SExpr e;
  e.is_atom = true;
  e.atom = toks[pos++];
  return e;
}

}  // namespace detail

inline std::vector<SExpr> parse_sexprs(const std::string& text) {
  std::vector<std::string> toks;
  detail::tokenize(text, toks);
  std::vector<SExpr> out;
  std::size_t pos = 0;
  while (pos < toks.size()) out.push_back(detail::read_sexpr(toks, pos));
  return out;
}

// Numeric term: numeral, decimal, (- t), (/ a b), nested combinations.
inline Rational parse_numeric_term(const SExpr& e) {
  if (e.is_atom) return parse_rational(e.atom);
  if (e.items.empty()) throw BackendError("smtlib: empty numeric term");
  const std::string& op = e.items.front().atom;
  if (op == "-" && e.items.size() == 2) return -parse_numeric_term(e.items[1]);
  if (op == "/" && e.items.size() == 3)
    return parse_numeric_term(e.items[1]) / parse_numeric_term(e.items[2]);
  throw BackendError("smtlib: cannot parse numeric term starting with '" + op + "'");
}

// Extracts define-fun values from a solver's (get-model) output.
inline std::map<std::string, Rational> parse_model(const std::string& text) {
  std::map<std::string, Rational> values;
  std::vector<SExpr> exprs = parse_sexprs(text);
  // Model shapes seen in the wild: (model (define-fun ...) ...) or a bare
  // list of define-funs; scan recursively for robustness.
  std::vector<const SExpr*> stack;
  for (const SExpr& e : exprs) stack.push_back(&e);
  while (!stack.empty()) {
    const SExpr* e = stack.back();
    stack.pop_back();
    if (e->is_atom) continue;
    if (!e->items.empty() && e->items.front().is_atom && e->items.front().atom == "define-fun" &&
        e->items.size() >= 5) {
      values[e->items[1].atom] = parse_numeric_term(e->items.back());
      continue;
    }
    for (const SExpr& sub : e->items) stack.push_back(&sub);
  }
  return values;
}

// ---- process driver ----------------------------------------------------------

struct ProcessResult {
  int exit_code = -1;
  std::string out;
};

// Runs `command` through /bin/sh, feeding `input` on stdin and capturing
// stdout (stderr is folded in so error text reaches diagnostics).
inline ProcessResult run_process(const std::string& command, const std::string& input) {
  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) throw BackendError("smtlib: pipe() failed");
  pid_t pid = fork();
  if (pid < 0) throw BackendError("smtlib: fork() failed");
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    dup2(out_pipe[1], STDERR_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);

  // A solver may exit before draining stdin; block SIGPIPE so the write
  // fails with EPIPE instead of killing this process, then drop any pending
  // instance before restoring the mask.
  sigset_t pipe_set, old_set;
  sigemptyset(&pipe_set);
  sigaddset(&pipe_set, SIGPIPE);
  pthread_sigmask(SIG_BLOCK, &pipe_set, &old_set);
  std::size_t written = 0;
  while (written < input.size()) {
    ssize_t n = write(in_pipe[1], input.data() + written, input.size() - written);
    if (n <= 0) break;
    written += static_cast<std::size_t>(n);
  }
  close(in_pipe[1]);
  struct timespec poll_ts = {0, 0};
  while (sigtimedwait(&pipe_set, nullptr, &poll_ts) > 0) {
  }
  pthread_sigmask(SIG_SETMASK, &old_set, nullptr);
  std::string out;
  char buf[4096];
  ssize_t n;
  while ((n = read(out_pipe[0], buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  close(out_pipe[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  ProcessResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = std::move(out);
  return r;
}

// ---- serve-side solver -------------------------------------------------------
//
// Solves the emitted QF_LRA subset: declare-const Real variables, asserts that
// are linear atoms or flat disjunctions of linear atoms. Used by the hidden
// `smtlib-serve` CLI mode so process-protocol tests need no external solver.

namespace detail {

struct AffTerm {
  std::map<std::size_t, Rational> coef;
  Rational cst;
};

inline AffTerm parse_affine(const SExpr& e, const std::map<std::string, std::size_t>& vars) {
  AffTerm t;
  if (e.is_atom) {
    auto it = vars.find(e.atom);
    if (it != vars.end()) {
      t.coef[it->second] = 1;
      return t;
    }
    t.cst = parse_rational(e.atom);
    return t;
  }
  if (e.items.empty()) throw BackendError("smtlib-serve: empty term");
  const std::string& op = e.items.front().atom;
  if (op == "+") {
    for (std::size_t i = 1; i < e.items.size(); ++i) {
      AffTerm s = parse_affine(e.items[i], vars);
      for (auto& [v, c] : s.coef) t.coef[v] += c;
      t.cst += s.cst;
    }
    return t;
  }
  if (op == "-") {
    t = parse_affine(e.items[1], vars);
    if (e.items.size() == 2) {
      for (auto& [v, c] : t.coef) c = -c;
      t.cst = -t.cst;
      return t;
    }
    for (std::size_t i = 2; i < e.items.size(); ++i) {
      AffTerm s = parse_affine(e.items[i], vars);
      for (auto& [v, c] : s.coef) t.coef[v] -= c;
      t.cst -= s.cst;
    }
    return t;
  }
  if (op == "*") {
    if (e.items.size() != 3) throw BackendError("smtlib-serve: '*' expects two arguments");
    AffTerm a = parse_affine(e.items[1], vars);
    AffTerm b = parse_affine(e.items[2], vars);
    if (!a.coef.empty() && !b.coef.empty()) throw BackendError("smtlib-serve: nonlinear product");
    const AffTerm& lin = a.coef.empty() ? b : a;
    const Rational k = a.coef.empty() ? a.cst : b.cst;
    t.cst = lin.cst * k;
    for (auto& [v, c] : lin.coef) t.coef[v] = c * k;
    return t;
  }
  if (op == "/") {
    t.cst = parse_numeric_term(e);
    return t;
  }
  throw BackendError("smtlib-serve: unsupported term '" + op + "'");
}

struct Atom {
  LinearConstraint con;  // over the declared variables
};

inline Atom make_atom(const SExpr& e, const std::map<std::string, std::size_t>& vars,
                      std::size_t nvars) {
  if (e.is_atom || e.items.size() != 3) throw BackendError("smtlib-serve: malformed atom");
  const std::string& op = e.items.front().atom;
  AffTerm a = parse_affine(e.items[1], vars);
  AffTerm b = parse_affine(e.items[2], vars);
  // canonical: (a - b) REL 0
  AffTerm d;
  d.cst = a.cst - b.cst;
  d.coef = a.coef;
  for (auto& [v, c] : b.coef) d.coef[v] -= c;

  LinearConstraint con;
  con.coef.assign(nvars, Rational(0));
  Rational sign = 1;
  if (op == ">=" || op == ">" || op == "=")
    sign = 1;
  else if (op == "<=" || op == "<")
    sign = -1;
  else
    throw BackendError("smtlib-serve: unsupported relation '" + op + "'");
  for (auto& [v, c] : d.coef) con.coef[v] = sign * c;
  con.rhs = -sign * d.cst;
  con.rel = (op == "=") ? Rel::Eq : (op == ">" || op == "<") ? Rel::Gt : Rel::Ge;
  return Atom{std::move(con)};
}

}  // namespace detail

struct ServeScript {
  std::vector<std::string> var_names;
  std::vector<std::vector<detail::Atom>> clauses;  // conjunction of disjunctions
  bool wants_model = false;
  bool has_check = false;
};

inline ServeScript parse_script(const std::string& text) {
  ServeScript s;
  std::map<std::string, std::size_t> vars;
  std::vector<SExpr> cmds = parse_sexprs(text);
  // Two passes: variables first so asserts can be emitted in any order.
  for (const SExpr& c : cmds) {
    if (c.is_atom || c.items.empty() || !c.items.front().is_atom) continue;
    if (c.items.front().atom == "declare-const" || c.items.front().atom == "declare-fun") {
      const std::string& name = c.items[1].atom;
      if (!vars.count(name)) {
        vars[name] = s.var_names.size();
        s.var_names.push_back(name);
      }
    }
  }
  for (const SExpr& c : cmds) {
    if (c.is_atom || c.items.empty() || !c.items.front().is_atom) continue;
    const std::string& head = c.items.front().atom;
    if (head == "assert") {
      const SExpr& body = c.items.at(1);
      std::vector<detail::Atom> clause;
      if (!body.is_atom && !body.items.empty() && body.items.front().atom == "or") {
        for (std::size_t i = 1; i < body.items.size(); ++i)
          clause.push_back(detail::make_atom(body.items[i], vars, s.var_names.size()));
      } else {
        clause.push_back(detail::make_atom(body, vars, s.var_names.size()));
      }
      s.clauses.push_back(std::move(clause));
    } else if (head == "check-sat") {
      s.has_check = true;
    } else if (head == "get-model") {
      s.wants_model = true;
    }
    // set-logic / set-option / exit are accepted and ignored
  }
  return s;
}

namespace detail {

inline bool serve_dpll(const ServeScript& s, std::size_t clause_idx,
                       std::vector<LinearConstraint>& active, RatVec* model) {
  if (clause_idx == s.clauses.size()) {
    LpSolution sol = lp_feasible(s.var_names.size(), active);
    if (sol.feasible && model) *model = sol.x;
    return sol.feasible;
  }
  for (const Atom& a : s.clauses[clause_idx]) {
    active.push_back(a.con);
    if (serve_dpll(s, clause_idx + 1, active, model)) {
      active.pop_back();
      return true;
    }
    active.pop_back();
  }
  return false;
}

}  // namespace detail

// Answers the script the way a solver process would on stdout.
inline std::string serve(const std::string& script_text) {
  ServeScript s = parse_script(script_text);
  if (!s.has_check) return "";
  std::vector<LinearConstraint> active;
  RatVec model;
  bool sat = detail::serve_dpll(s, 0, active, &model);
  std::ostringstream out;
  out << (sat ? "sat" : "unsat") << "\n";
  if (s.wants_model) {
    if (!sat) {
      out << "(error \"model is not available\")\n";
    } else {
      out << "(model\n";
      for (std::size_t i = 0; i < s.var_names.size(); ++i)
        out << "  (define-fun " << s.var_names[i] << " () Real " << format_rational(model[i])
            << ")\n";
      out << ")\n";
    }
  }
  return out.str();
}

}  // namespace smtlib
}  // namespace stabopt
