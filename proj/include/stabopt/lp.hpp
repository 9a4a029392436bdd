#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "stabopt/rational.hpp"

namespace stabopt {

// coef . x  REL  rhs, over free (sign-unrestricted) rational variables.
enum class Rel { Eq, Ge, Gt };

struct LinearConstraint {
  RatVec coef;
  Rational rhs;
  Rel rel = Rel::Ge;
};

struct LpSolution {
  bool feasible = false;
  RatVec x;
};

struct LpOptimum {
  bool feasible = false;
  bool bounded = true;
  RatVec x;
  Rational value;
};

namespace detail_lp {

// Dense exact simplex. Columns 0..ncols-1 are nonnegative variables, column
// ncols is the right-hand side; rows are equalities with basis[i] basic in
// row i. Bland's rule throughout, so exact arithmetic terminates.
struct Tableau {
  std::vector<RatVec> rows;
  std::vector<std::size_t> basis;
  std::size_t ncols = 0;
};

inline void pivot(Tableau& t, std::size_t leave, std::size_t enter, RatVec* red) {
  RatVec& prow = t.rows[leave];
  Rational p = prow[enter];
  for (Rational& v : prow) v /= p;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (i == leave) continue;
    Rational f = t.rows[i][enter];
    if (f == 0) continue;
    for (std::size_t j = 0; j <= t.ncols; ++j)
      if (prow[j] != 0) t.rows[i][j] -= f * prow[j];
  }
  if (red) {
    Rational f = (*red)[enter];
    if (f != 0)
      for (std::size_t j = 0; j < t.ncols; ++j)
        if (prow[j] != 0) (*red)[j] -= f * prow[j];
  }
  t.basis[leave] = enter;
}

// Minimizes cost . z. Returns false when unbounded below.
inline bool simplex_min(Tableau& t, const RatVec& cost) {
  RatVec red(t.ncols, Rational(0));
  for (std::size_t j = 0; j < t.ncols; ++j) red[j] = cost[j];
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const Rational& cb = cost[t.basis[i]];
    if (cb == 0) continue;
    for (std::size_t j = 0; j < t.ncols; ++j)
      if (t.rows[i][j] != 0) red[j] -= cb * t.rows[i][j];
  }
  for (;;) {
    std::size_t enter = t.ncols;
    for (std::size_t j = 0; j < t.ncols; ++j)
      if (red[j] < 0) {
        enter = j;
        break;
      }
    if (enter == t.ncols) return true;
    std::size_t leave = std::numeric_limits<std::size_t>::max();
    Rational best;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      if (t.rows[i][enter] <= 0) continue;
      Rational ratio = t.rows[i][t.ncols] / t.rows[i][enter];
      if (leave == std::numeric_limits<std::size_t>::max() || ratio < best ||
          (ratio == best && t.basis[i] < t.basis[leave])) {
        leave = i;
        best = ratio;
      }
    }
    if (leave == std::numeric_limits<std::size_t>::max()) return false;
    pivot(t, leave, enter, &red);
  }
}

struct StandardForm {
  Tableau t;
  std::size_t n_structural = 0;   // columns before the artificials
  std::size_t slack_col = std::numeric_limits<std::size_t>::max();  // shared strict slack s
};

// Builds the phase-1 tableau. Free variables are split x_j = z_{2j} - z_{2j+1}.
// Strict rows: with shared_slack, coef.x - s - surplus = rhs plus the cap
// s <= 1; otherwise they are tightened to coef.x >= rhs + margin.
inline StandardForm build(std::size_t nvars, const std::vector<LinearConstraint>& cons,
                          bool shared_slack, const Rational& margin) {
  std::size_t n_surplus = 0;
  bool any_strict = false;
  for (const LinearConstraint& c : cons) {
    if (c.rel != Rel::Eq) ++n_surplus;
    if (c.rel == Rel::Gt) any_strict = true;
  }
  bool use_s = shared_slack && any_strict;
  std::size_t split = 2 * nvars;
  std::size_t n_structural = split + n_surplus + (use_s ? 2 : 0);  // s and its cap slack
  std::size_t s_col = split + n_surplus;
  std::size_t nrows = cons.size() + (use_s ? 1 : 0);
  std::size_t ncols = n_structural + nrows;  // artificials appended

  StandardForm sf;
  sf.n_structural = n_structural;
  if (use_s) sf.slack_col = s_col;
  sf.t.ncols = ncols;
  sf.t.rows.assign(nrows, RatVec(ncols + 1, Rational(0)));
  sf.t.basis.assign(nrows, 0);

  std::size_t surplus_next = split;
  std::size_t row = 0;
  for (const LinearConstraint& c : cons) {
    if (c.coef.size() != nvars) throw InputError("lp: constraint coefficient length mismatch");
    RatVec& r = sf.t.rows[row];
    for (std::size_t j = 0; j < nvars; ++j) {
      if (c.coef[j] == 0) continue;
      r[2 * j] = c.coef[j];
      r[2 * j + 1] = -c.coef[j];
    }
    Rational rhs = c.rhs;
    if (c.rel != Rel::Eq) r[surplus_next++] = -1;
    if (c.rel == Rel::Gt) {
      if (use_s)
        r[s_col] = -1;
      else
        rhs += margin;
    }
    r[ncols] = rhs;
    if (r[ncols] < 0)
      for (Rational& v : r) v = -v;
    ++row;
  }
  if (use_s) {
    RatVec& r = sf.t.rows[row];
    r[s_col] = 1;
    r[s_col + 1] = 1;
    r[ncols] = 1;
    ++row;
  }
  for (std::size_t i = 0; i < nrows; ++i) {
    sf.t.rows[i][n_structural + i] = 1;
    sf.t.basis[i] = n_structural + i;
  }
  return sf;
}

// Phase 1. Returns false when the system is infeasible; on success the
// artificial columns are gone and every basic variable is structural.
inline bool phase1(StandardForm& sf) {
  Tableau& t = sf.t;
  RatVec cost(t.ncols, Rational(0));
  for (std::size_t j = sf.n_structural; j < t.ncols; ++j) cost[j] = 1;
  simplex_min(t, cost);  // never unbounded: cost bounded below by 0

  Rational residue = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (t.basis[i] >= sf.n_structural) residue += t.rows[i][t.ncols];
  if (residue != 0) return false;

  // Pivot leftover zero-valued artificials out; rows with no structural
  // entry are redundant equalities and get dropped.
  for (std::size_t i = 0; i < t.rows.size();) {
    if (t.basis[i] < sf.n_structural) {
      ++i;
      continue;
    }
    std::size_t enter = t.ncols;
    for (std::size_t j = 0; j < sf.n_structural; ++j)
      if (t.rows[i][j] != 0) {
        enter = j;
        break;
      }
    if (enter == t.ncols) {
      t.rows.erase(t.rows.begin() + static_cast<std::ptrdiff_t>(i));
      t.basis.erase(t.basis.begin() + static_cast<std::ptrdiff_t>(i));
    } else {
      pivot(t, i, enter, nullptr);
      ++i;
    }
  }
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    RatVec nr(sf.n_structural + 1);
    for (std::size_t j = 0; j < sf.n_structural; ++j) nr[j] = t.rows[i][j];
    nr[sf.n_structural] = t.rows[i][t.ncols];
    t.rows[i] = std::move(nr);
  }
  t.ncols = sf.n_structural;
  return true;
}

inline RatVec extract_point(const StandardForm& sf, std::size_t nvars) {
  RatVec z(sf.n_structural, Rational(0));
  for (std::size_t i = 0; i < sf.t.rows.size(); ++i)
    z[sf.t.basis[i]] = sf.t.rows[i][sf.t.ncols];
  RatVec x(nvars);
  for (std::size_t j = 0; j < nvars; ++j) x[j] = z[2 * j] - z[2 * j + 1];
  return x;
}

// Maximal shared strict slack s*, or unset when even the non-strict
// relaxation is infeasible.
inline bool max_strict_slack(std::size_t nvars, const std::vector<LinearConstraint>& cons,
                             Rational* s_star) {
  StandardForm sf = build(nvars, cons, /*shared_slack=*/true, Rational(0));
  if (!phase1(sf)) return false;
  RatVec cost(sf.t.ncols, Rational(0));
  cost[sf.slack_col] = -1;  // maximize s
  simplex_min(sf.t, cost);  // bounded by the s <= 1 cap row
  Rational s = 0;
  for (std::size_t i = 0; i < sf.t.rows.size(); ++i)
    if (sf.t.basis[i] == sf.slack_col) s = sf.t.rows[i][sf.t.ncols];
  *s_star = s;
  return true;
}

}  // namespace detail_lp

// Feasibility of a mixed strict/non-strict rational system. Strict rows are
// handled by maximizing a shared slack s (capped at 1): feasible iff s* > 0,
// and the returned point keeps a margin of s*/2 on every strict row.
inline LpSolution lp_feasible(std::size_t nvars, const std::vector<LinearConstraint>& cons) {
  using namespace detail_lp;
  bool any_strict = false;
  for (const LinearConstraint& c : cons)
    if (c.rel == Rel::Gt) any_strict = true;

  Rational margin = 0;
  if (any_strict) {
    Rational s_star;
    if (!max_strict_slack(nvars, cons, &s_star)) return {};
    if (s_star <= 0) return {};
    margin = s_star / 2;
  }
  StandardForm sf = build(nvars, cons, /*shared_slack=*/false, margin);
  if (!phase1(sf)) return {};
  return LpSolution{true, extract_point(sf, nvars)};
}

// Feasibility plus an objective. Strict rows are first fixed at margin s*/2,
// then obj . x is optimized over the tightened (closed) system.
inline LpOptimum lp_optimize(std::size_t nvars, const std::vector<LinearConstraint>& cons,
                             const RatVec& obj, bool maximize) {
  using namespace detail_lp;
  if (obj.size() != nvars) throw InputError("lp: objective length mismatch");
  bool any_strict = false;
  for (const LinearConstraint& c : cons)
    if (c.rel == Rel::Gt) any_strict = true;

  Rational margin = 0;
  if (any_strict) {
    Rational s_star;
    if (!max_strict_slack(nvars, cons, &s_star)) return {};
    if (s_star <= 0) return {};
    margin = s_star / 2;
  }
  StandardForm sf = build(nvars, cons, /*shared_slack=*/false, margin);
  if (!phase1(sf)) return {};

  RatVec cost(sf.t.ncols, Rational(0));
  for (std::size_t j = 0; j < nvars; ++j) {
    if (obj[j] == 0) continue;
    // minimize -obj.x when maximizing
    cost[2 * j] = maximize ? -obj[j] : obj[j];
    cost[2 * j + 1] = maximize ? obj[j] : -obj[j];
  }
  LpOptimum out;
  out.feasible = true;
  out.bounded = simplex_min(sf.t, cost);
  if (!out.bounded) return out;
  out.x = extract_point(sf, nvars);
  out.value = 0;
  for (std::size_t j = 0; j < nvars; ++j) out.value += obj[j] * out.x[j];
  return out;
}

}  // namespace stabopt
