#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stabopt/model.hpp"
#include "stabopt/rational.hpp"

namespace stabopt {

enum class GuardKind { Abs, Rel };

// Stability region shape. Abs: Chebyshev ball of fixed radius r around the
// center. Rel: per-coordinate radius rho*center_i, defined only where the
// center is componentwise nonnegative.
struct Guard {
  GuardKind kind = GuardKind::Abs;
  Rational value;  // radius r (Abs) or ratio rho (Rel)

  static Guard abs_box(Rational r) {
    if (r <= 0) throw InputError("AbsBox radius must be positive");
    return Guard{GuardKind::Abs, std::move(r)};
  }
  static Guard rel_box(Rational rho) {
    if (rho <= 0 || rho >= 1) throw InputError("RelBox ratio must lie in (0, 1)");
    return Guard{GuardKind::Rel, std::move(rho)};
  }
};

// theta(center, other): is `other` inside the stability region around `center`?
// The center is the free variable of the relation; RelBox is asymmetric.
inline bool theta_holds(const Guard& g, const RatVec& center, const RatVec& other) {
  if (center.size() != other.size()) throw InputError("theta: dimension mismatch");
  for (std::size_t i = 0; i < center.size(); ++i) {
    Rational radius;
    if (g.kind == GuardKind::Abs) {
      radius = g.value;
    } else {
      if (center[i] < 0) throw InputError("RelBox guard requires a nonnegative center");
      radius = g.value * center[i];
    }
    if (rat_abs(other[i] - center[i]) > radius) return false;
  }
  return true;
}

// {x' : theta(center, x')} intersected with the domain.
inline Box region_bounds(const Guard& g, const RatVec& center, const Box& domain) {
  if (center.size() != domain.dim()) throw InputError("region_bounds: dimension mismatch");
  if (!domain.contains(center)) throw InputError("region_bounds: center outside domain");
  RatVec lo(center.size()), hi(center.size());
  for (std::size_t i = 0; i < center.size(); ++i) {
    Rational radius;
    if (g.kind == GuardKind::Abs) {
      radius = g.value;
    } else {
      if (center[i] < 0) throw InputError("RelBox guard requires a nonnegative center");
      radius = g.value * center[i];
    }
    lo[i] = std::max(Rational(center[i] - radius), domain.lower[i]);
    hi[i] = std::min(Rational(center[i] + radius), domain.upper[i]);
  }
  return Box(std::move(lo), std::move(hi));
}

// Closed box equal to {x : theta_delta(x, d)}, i.e. the set of centers x such
// that some z with ||x - z||_inf <= delta satisfies theta(z, d).
//   Abs: [d_i - r - delta, d_i + r + delta]
//   Rel: [d_i/(1+rho) - delta, d_i/(1-rho) + delta], requires d_i >= 0
inline Box relax(const Guard& g, const RatVec& d, const Rational& delta) {
  if (delta < 0) throw InputError("relax: delta must be nonnegative");
  RatVec lo(d.size()), hi(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (g.kind == GuardKind::Abs) {
      lo[i] = d[i] - g.value - delta;
      hi[i] = d[i] + g.value + delta;
    } else {
      if (d[i] < 0) throw InputError("RelBox relax requires a nonnegative point");
      lo[i] = d[i] / (1 + g.value) - delta;
      hi[i] = d[i] / (1 - g.value) + delta;
    }
  }
  return Box(std::move(lo), std::move(hi));
}

// Learned exclusion: a refuted neighbourhood around counter-example d with
// value f(d) below the threshold in force when it was learned.
struct Lemma {
  RatVec d;
  Rational fd;
  Rational delta;
  Box excluded;  // relax(guard, d, delta)
};

inline Lemma make_lemma(const Guard& g, RatVec d, Rational fd, Rational delta) {
  Box b = relax(g, d, delta);
  return Lemma{std::move(d), std::move(fd), std::move(delta), std::move(b)};
}

inline Guard guard_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind")) throw InputError("guard: expected {\"kind\": ...}");
  std::string kind = j["kind"].get<std::string>();
  if (kind == "abs") {
    if (!j.contains("radius")) throw InputError("guard: abs kind needs 'radius'");
    return Guard::abs_box(rational_from_json(j["radius"], "guard radius"));
  }
  if (kind == "rel") {
    if (!j.contains("ratio")) throw InputError("guard: rel kind needs 'ratio'");
    return Guard::rel_box(rational_from_json(j["ratio"], "guard ratio"));
  }
  throw InputError("guard: unknown kind '" + kind + "'");
}

inline nlohmann::json guard_to_json(const Guard& g) {
  nlohmann::json j;
  if (g.kind == GuardKind::Abs) {
    j["kind"] = "abs";
    j["radius"] = rational_to_json(g.value);
  } else {
    j["kind"] = "rel";
    j["ratio"] = rational_to_json(g.value);
  }
  return j;
}

}  // namespace stabopt
