#pragma once

#include <chrono>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stabopt/guard.hpp"
#include "stabopt/lp.hpp"
#include "stabopt/model.hpp"
#include "stabopt/smtlib.hpp"

namespace stabopt {

// Which side of the threshold the query asks for. GeqT asks for a point with
// f(x) >= T subject to the exclusion lemmas; LtT asks for f(x) < T inside a
// region. Both are decided exactly.
enum class ThresholdSense { GeqT, LtT };

struct Query {
  ConstraintForm form;
  Box domain;                 // bounds on the input variables
  std::optional<Box> region;  // further restriction (counter-example search)
  ThresholdSense sense = ThresholdSense::GeqT;
  Rational threshold;
  std::vector<Lemma> lemmas;  // each excludes a closed box, strictly
  // Witness preference: when set, pick the feasible point of Chebyshev
  // distance closest to this center instead of the extreme objective value.
  // Near counter-examples matter: the exclusion learned from one covers the
  // widest neighborhood of the refuted candidate.
  std::optional<RatVec> prefer_near;
};

struct Witness {
  RatVec x;
  Rational y;
};

// Sign pattern of one explored linear piece; +1 means pre >= 0, -1 pre <= 0.
struct LeafRecord {
  std::vector<int> phases;
};

struct SolveStats {
  std::size_t leaf_lps = 0;           // linear programs solved
  std::size_t phase_assignments = 0;  // sign patterns reaching the LP stage
  std::size_t lemma_branches = 0;     // face splits taken
  std::size_t phases_fixed = 0;       // units resolved by interval reasoning
  std::vector<LeafRecord> leaves;     // only when record_leaves is set
};

struct CertifierConfig {
  std::size_t relu_cap = 24;
  double timeout_s = 60.0;
  bool record_leaves = false;
};

namespace detail_cert {

// Affine function of the query inputs: coef . x + cst.
struct AffX {
  RatVec coef;
  Rational cst;

  Rational eval(const RatVec& x) const {
    Rational acc = cst;
    for (std::size_t i = 0; i < coef.size(); ++i)
      if (coef[i] != 0) acc += coef[i] * x[i];
    return acc;
  }
};

struct Interval {
  Rational lo, hi;
};

inline Interval eval_interval(const LinExpr& e, const std::vector<Interval>& vals) {
  Interval out{e.cst, e.cst};
  for (std::size_t v = 0; v < e.coef.size(); ++v) {
    const Rational& c = e.coef[v];
    if (c == 0) continue;
    if (c > 0) {
      out.lo += c * vals[v].lo;
      out.hi += c * vals[v].hi;
    } else {
      out.lo += c * vals[v].hi;
      out.hi += c * vals[v].lo;
    }
  }
  return out;
}

}  // namespace detail_cert

class Certifier {
 public:
  explicit Certifier(CertifierConfig cfg = {}) : cfg_(cfg) {}

  // Returns a witness satisfying every constraint of the query, or nullopt
  // when none exists. Throws CapacityError past the ReLU cap and TimeoutError
  // past the configured wall-clock budget.
  std::optional<Witness> solve(const Query& q) {
    validate(q);
    stats_ = SolveStats{};
    deadline_ = std::chrono::steady_clock::now() +
                std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                    std::chrono::duration<double>(cfg_.timeout_s));

    Box working = q.region ? *q.region : q.domain;
    std::vector<LinearConstraint> faces;
    std::optional<Witness> found;
    search_lemmas(q, q.lemmas.size(), working, faces, found);
    return found;
  }

  const SolveStats& last_stats() const { return stats_; }
  const CertifierConfig& config() const { return cfg_; }

 private:
  CertifierConfig cfg_;
  SolveStats stats_;
  std::chrono::steady_clock::time_point deadline_;

  void validate(const Query& q) const {
    std::size_t n = q.form.input_vars.size();
    if (q.domain.dim() != n) throw InputError("certifier: domain dimension mismatch");
    if (q.region) {
      if (q.region->dim() != n) throw InputError("certifier: region dimension mismatch");
      for (std::size_t i = 0; i < n; ++i)
        if (q.region->lower[i] < q.domain.lower[i] || q.region->upper[i] > q.domain.upper[i])
          throw InputError("certifier: region extends outside the domain");
    }
    for (const Lemma& l : q.lemmas)
      if (l.excluded.dim() != n) throw InputError("certifier: lemma dimension mismatch");
    if (q.form.relu_count() > cfg_.relu_cap) {
      std::ostringstream msg;
      msg << "certifier: " << q.form.relu_count() << " ReLU units exceed the builtin cap of "
          << cfg_.relu_cap << "; route this query to an external solver";
      throw CapacityError(msg.str());
    }
  }

  void check_deadline() const {
    if (std::chrono::steady_clock::now() > deadline_)
      throw TimeoutError("certifier: query exceeded the time budget");
  }

  // Lemma exclusions are handled by branching on box faces, most recent lemma
  // first. Each face is a strict halfspace, so points on the excluded box's
  // own boundary are rejected. `idx` counts down; 0 means all lemmas handled.
  void search_lemmas(const Query& q, std::size_t idx, const Box& working,
                     std::vector<LinearConstraint>& faces, std::optional<Witness>& found) {
    if (found) return;
    check_deadline();
    if (idx == 0) {
      search_phases(q, working, faces, found);
      return;
    }
    const Lemma& lemma = q.lemmas[idx - 1];
    const Box& ex = lemma.excluded;

    // A working box disjoint from the closed excluded box already satisfies
    // the strict exclusion everywhere.
    bool disjoint = false;
    for (std::size_t j = 0; j < working.dim(); ++j)
      if (working.upper[j] < ex.lower[j] || working.lower[j] > ex.upper[j]) disjoint = true;
    if (disjoint) {
      search_lemmas(q, idx - 1, working, faces, found);
      return;
    }

    std::size_t n = working.dim();
    for (std::size_t j = 0; j < n && !found; ++j) {
      // low face: x_j < ex.lower[j]
      if (working.lower[j] < ex.lower[j]) {
        ++stats_.lemma_branches;
        Box narrowed = working;
        if (narrowed.upper[j] > ex.lower[j]) narrowed.upper[j] = ex.lower[j];
        LinearConstraint face;
        face.coef.assign(n, Rational(0));
        face.coef[j] = -1;
        face.rhs = -ex.lower[j];
        face.rel = Rel::Gt;
        faces.push_back(std::move(face));
        search_lemmas(q, idx - 1, narrowed, faces, found);
        faces.pop_back();
      }
      // high face: x_j > ex.upper[j]
      if (!found && working.upper[j] > ex.upper[j]) {
        ++stats_.lemma_branches;
        Box narrowed = working;
        if (narrowed.lower[j] < ex.upper[j]) narrowed.lower[j] = ex.upper[j];
        LinearConstraint face;
        face.coef.assign(n, Rational(0));
        face.coef[j] = 1;
        face.rhs = ex.upper[j];
        face.rel = Rel::Gt;
        faces.push_back(std::move(face));
        search_lemmas(q, idx - 1, narrowed, faces, found);
        faces.pop_back();
      }
    }
  }

  // With the lemma faces settled, fix ReLU phases: interval propagation over
  // the narrowed box decides the units it can, the rest are enumerated with
  // the phase observed at the box midpoint tried first.
  void search_phases(const Query& q, const Box& working, std::vector<LinearConstraint>& faces,
                     std::optional<Witness>& found) {
    using detail_cert::Interval;
    std::size_t nrelu = q.form.relu_count();

    std::vector<Interval> vals(q.form.num_vars, Interval{0, 0});
    for (std::size_t i = 0; i < q.form.input_vars.size(); ++i)
      vals[q.form.input_vars[i]] = Interval{working.lower[i], working.upper[i]};

    std::vector<int> phases(nrelu, 0);
    std::size_t next_pair = 0;
    Interval y{0, 0};
    for (const auto& [var, expr] : q.form.definitions) {
      vals[var] = detail_cert::eval_interval(expr, vals);
      if (var == q.form.output_var) {
        y = vals[var];
        continue;
      }
      const auto& [pre_var, post_var] = q.form.relu_pairs[next_pair];
      if (vals[pre_var].lo >= 0)
        phases[next_pair] = 1;
      else if (vals[pre_var].hi <= 0)
        phases[next_pair] = -1;
      vals[post_var].lo = vals[pre_var].lo < 0 ? Rational(0) : vals[pre_var].lo;
      vals[post_var].hi = vals[pre_var].hi < 0 ? Rational(0) : vals[pre_var].hi;
      ++next_pair;
    }
    for (int p : phases)
      if (p != 0) ++stats_.phases_fixed;

    // Threshold pruning: the interval bound already decides some subtrees.
    if (q.sense == ThresholdSense::GeqT && y.hi < q.threshold) return;
    if (q.sense == ThresholdSense::LtT && y.lo >= q.threshold) return;

    RatVec mid_values = solve_constraints(q.form, working.midpoint());
    std::vector<int> preferred(nrelu, 1);
    for (std::size_t k = 0; k < nrelu; ++k)
      if (mid_values[q.form.relu_pairs[k].first] < 0) preferred[k] = -1;

    enumerate_phases(q, working, faces, phases, preferred, 0, found);
  }

  void enumerate_phases(const Query& q, const Box& working, std::vector<LinearConstraint>& faces,
                        std::vector<int>& phases, const std::vector<int>& preferred,
                        std::size_t k, std::optional<Witness>& found) {
    if (found) return;
    if (k == phases.size()) {
      solve_leaf(q, working, faces, phases, found);
      return;
    }
    if (phases[k] != 0) {
      enumerate_phases(q, working, faces, phases, preferred, k + 1, found);
      return;
    }
    for (int sign : {preferred[k], -preferred[k]}) {
      phases[k] = sign;
      enumerate_phases(q, working, faces, phases, preferred, k + 1, found);
      phases[k] = 0;
      if (found) return;
    }
  }

  void solve_leaf(const Query& q, const Box& working, const std::vector<LinearConstraint>& faces,
                  const std::vector<int>& phases, std::optional<Witness>& found) {
    check_deadline();
    ++stats_.phase_assignments;
    std::size_t n = q.form.input_vars.size();

    // Substitute the fixed phases to express every variable over x alone.
    std::vector<detail_cert::AffX> affx(q.form.num_vars);
    for (std::size_t i = 0; i < n; ++i) {
      affx[q.form.input_vars[i]].coef.assign(n, Rational(0));
      affx[q.form.input_vars[i]].coef[i] = 1;
    }
    std::vector<LinearConstraint> rows;
    std::size_t next_pair = 0;
    for (const auto& [var, expr] : q.form.definitions) {
      detail_cert::AffX acc;
      acc.coef.assign(n, Rational(0));
      acc.cst = expr.cst;
      for (std::size_t v = 0; v < expr.coef.size(); ++v) {
        if (expr.coef[v] == 0) continue;
        for (std::size_t i = 0; i < n; ++i) acc.coef[i] += expr.coef[v] * affx[v].coef[i];
        acc.cst += expr.coef[v] * affx[v].cst;
      }
      affx[var] = std::move(acc);
      if (var == q.form.output_var) continue;
      const auto& [pre_var, post_var] = q.form.relu_pairs[next_pair];
      int sign = phases[next_pair];
      ++next_pair;
      // sign row: pre >= 0 under +, pre <= 0 under -
      LinearConstraint row;
      row.coef = affx[pre_var].coef;
      row.rhs = -affx[pre_var].cst;
      if (sign < 0) {
        for (Rational& c : row.coef) c = -c;
        row.rhs = -row.rhs;
      }
      row.rel = Rel::Ge;
      rows.push_back(std::move(row));
      if (sign > 0) {
        affx[post_var] = affx[pre_var];
      } else {
        affx[post_var].coef.assign(n, Rational(0));
        affx[post_var].cst = 0;
      }
    }

    const detail_cert::AffX& yx = affx[q.form.output_var];

    for (std::size_t j = 0; j < n; ++j) {
      LinearConstraint lo;
      lo.coef.assign(n, Rational(0));
      lo.coef[j] = 1;
      lo.rhs = working.lower[j];
      lo.rel = Rel::Ge;
      rows.push_back(std::move(lo));
      LinearConstraint hi;
      hi.coef.assign(n, Rational(0));
      hi.coef[j] = -1;
      hi.rhs = -working.upper[j];
      hi.rel = Rel::Ge;
      rows.push_back(std::move(hi));
    }
    for (const LinearConstraint& f : faces) rows.push_back(f);

    LinearConstraint thr;
    thr.coef = yx.coef;
    thr.rhs = q.threshold - yx.cst;
    thr.rel = Rel::Ge;
    if (q.sense == ThresholdSense::LtT) {
      // y < T, exact: the shared-slack phase certifies a strict point exists.
      for (Rational& c : thr.coef) c = -c;
      thr.rhs = yx.cst - q.threshold;
      thr.rel = Rel::Gt;
    }
    rows.push_back(std::move(thr));

    ++stats_.leaf_lps;
    if (cfg_.record_leaves) stats_.leaves.push_back(LeafRecord{phases});
    LpOptimum opt;
    if (q.prefer_near) {
      // Auxiliary variable t >= |x_j - center_j| for all j; minimize t.
      std::size_t tv = n;
      for (LinearConstraint& row : rows) row.coef.resize(n + 1, Rational(0));
      for (std::size_t j = 0; j < n; ++j) {
        LinearConstraint above;
        above.coef.assign(n + 1, Rational(0));
        above.coef[j] = -1;
        above.coef[tv] = 1;
        above.rhs = -(*q.prefer_near)[j];
        above.rel = Rel::Ge;
        rows.push_back(std::move(above));
        LinearConstraint below;
        below.coef.assign(n + 1, Rational(0));
        below.coef[j] = 1;
        below.coef[tv] = 1;
        below.rhs = (*q.prefer_near)[j];
        below.rel = Rel::Ge;
        rows.push_back(std::move(below));
      }
      RatVec obj(n + 1, Rational(0));
      obj[tv] = 1;
      opt = lp_optimize(n + 1, rows, obj, false);
      if (opt.feasible) opt.x.resize(n);
    } else {
      // GeqT leaves pick the best point of the piece, LtT leaves the worst;
      // extreme witnesses keep the surrounding search from stalling on ties.
      opt = lp_optimize(n, rows, yx.coef, q.sense == ThresholdSense::GeqT);
    }
    if (!opt.feasible) return;
    if (!opt.bounded) throw Error("certifier: leaf program is unbounded");
    Rational value = yx.eval(opt.x);
    if (q.sense == ThresholdSense::LtT && !(value < q.threshold)) return;
    found = Witness{opt.x, value};
  }
};

// ---- witness validation -------------------------------------------------------

// Checks a purported witness against every constraint of the query; returns a
// description of the first violation, or nullopt when the point is genuine.
inline std::optional<std::string> check_query_witness(const Query& q, const RatVec& x) {
  std::size_t n = q.form.input_vars.size();
  if (x.size() != n) return "witness dimension mismatch";
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] < q.domain.lower[i] || x[i] > q.domain.upper[i])
      return "witness leaves the domain on coordinate " + std::to_string(i);
  if (q.region)
    for (std::size_t i = 0; i < n; ++i)
      if (x[i] < q.region->lower[i] || x[i] > q.region->upper[i])
        return "witness leaves the region on coordinate " + std::to_string(i);
  for (std::size_t li = 0; li < q.lemmas.size(); ++li) {
    const Box& ex = q.lemmas[li].excluded;
    bool outside = false;
    for (std::size_t i = 0; i < n; ++i)
      if (x[i] < ex.lower[i] || x[i] > ex.upper[i]) outside = true;
    if (!outside) return "witness lands inside excluded box " + std::to_string(li);
  }
  RatVec values = solve_constraints(q.form, x);
  Rational y = values[q.form.output_var];
  if (q.sense == ThresholdSense::GeqT && y < q.threshold)
    return "witness value falls below the threshold";
  if (q.sense == ThresholdSense::LtT && !(y < q.threshold))
    return "witness value is not below the threshold";
  return std::nullopt;
}

// ---- SMT-LIB export -----------------------------------------------------------

namespace detail_cert {

inline void emit_affine(std::ostream& os, const LinExpr& e, const std::vector<std::string>& names) {
  std::vector<std::string> parts;
  for (std::size_t v = 0; v < e.coef.size(); ++v) {
    if (e.coef[v] == 0) continue;
    if (e.coef[v] == 1)
      parts.push_back(names[v]);
    else if (e.coef[v] == -1)
      parts.push_back("(- " + names[v] + ")");
    else
      parts.push_back("(* " + smtlib::format_rational(e.coef[v]) + " " + names[v] + ")");
  }
  if (e.cst != 0 || parts.empty()) parts.push_back(smtlib::format_rational(e.cst));
  if (parts.size() == 1) {
    os << parts.front();
    return;
  }
  os << "(+";
  for (const std::string& p : parts) os << " " << p;
  os << ")";
}

}  // namespace detail_cert

// Deterministic QF_LRA rendering of a query; the same query always yields the
// same bytes.
inline std::string emit_smtlib(const Query& q) {
  std::ostringstream os;
  os << "(set-option :produce-models true)\n";
  os << "(set-logic QF_LRA)\n";
  for (const std::string& name : q.form.names) os << "(declare-const " << name << " Real)\n";

  for (const auto& [var, expr] : q.form.definitions) {
    os << "(assert (= " << q.form.names[var] << " ";
    detail_cert::emit_affine(os, expr, q.form.names);
    os << "))\n";
  }
  for (const auto& [pre, post] : q.form.relu_pairs) {
    const std::string& p = q.form.names[pre];
    const std::string& o = q.form.names[post];
    os << "(assert (>= " << o << " 0))\n";
    os << "(assert (>= " << o << " " << p << "))\n";
    os << "(assert (or (= " << o << " 0) (= " << o << " " << p << ")))\n";
  }

  auto emit_box = [&](const Box& b) {
    for (std::size_t i = 0; i < b.dim(); ++i) {
      const std::string& name = q.form.names[q.form.input_vars[i]];
      os << "(assert (>= " << name << " " << smtlib::format_rational(b.lower[i]) << "))\n";
      os << "(assert (<= " << name << " " << smtlib::format_rational(b.upper[i]) << "))\n";
    }
  };
  emit_box(q.domain);
  if (q.region) emit_box(*q.region);

  const std::string& y = q.form.names[q.form.output_var];
  if (q.sense == ThresholdSense::GeqT)
    os << "(assert (>= " << y << " " << smtlib::format_rational(q.threshold) << "))\n";
  else
    os << "(assert (< " << y << " " << smtlib::format_rational(q.threshold) << "))\n";

  for (const Lemma& l : q.lemmas) {
    os << "(assert (or";
    for (std::size_t i = 0; i < l.excluded.dim(); ++i) {
      const std::string& name = q.form.names[q.form.input_vars[i]];
      os << " (< " << name << " " << smtlib::format_rational(l.excluded.lower[i]) << ")";
      os << " (> " << name << " " << smtlib::format_rational(l.excluded.upper[i]) << ")";
    }
    os << "))\n";
  }

  os << "(check-sat)\n";
  os << "(get-model)\n";
  return os.str();
}

// ---- external backend ---------------------------------------------------------

// Ships the query to an external SMT solver process (anything that reads
// SMT-LIB 2 on stdin and prints sat/unsat plus a model). The returned model is
// re-validated exactly; a solver that answers sat with a bogus point is
// reported, not trusted.
inline std::optional<Witness> external_solve(const Query& q, const std::string& solver_cmd) {
  std::string script = emit_smtlib(q);
  smtlib::ProcessResult proc = smtlib::run_process(solver_cmd, script);

  std::istringstream lines(proc.out);
  std::string verdict;
  lines >> verdict;
  if (verdict == "unsat") return std::nullopt;
  if (verdict != "sat") {
    std::string head = proc.out.substr(0, 200);
    throw BackendError("external solver gave no verdict (exit " +
                       std::to_string(proc.exit_code) + "): " + head);
  }

  std::string rest((std::istreambuf_iterator<char>(lines)), std::istreambuf_iterator<char>());
  std::map<std::string, Rational> model = smtlib::parse_model(rest);
  RatVec x;
  for (std::size_t i = 0; i < q.form.input_vars.size(); ++i) {
    const std::string& name = q.form.names[q.form.input_vars[i]];
    auto it = model.find(name);
    if (it == model.end()) throw BackendError("external solver model omits " + name);
    x.push_back(it->second);
  }
  if (auto violation = check_query_witness(q, x))
    throw BackendError("external solver returned an invalid model: " + *violation);
  RatVec values = solve_constraints(q.form, x);
  return Witness{std::move(x), values[q.form.output_var]};
}

}  // namespace stabopt
