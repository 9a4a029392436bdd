#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stabopt/certifier.hpp"
#include "stabopt/gp.hpp"
#include "stabopt/guard.hpp"
#include "stabopt/model.hpp"
#include "stabopt/rng.hpp"

namespace stabopt {

enum class VerdictKind { Lower, Upper };
enum class PointSource { Bo, Certifier };

// Candidate/counter-example pair recorded whenever a candidate is refuted.
struct PairRecord {
  RatVec candidate, counterexample;
  Rational f_candidate, f_counterexample, threshold;
  PointSource candidate_source = PointSource::Bo;
  PointSource counterexample_source = PointSource::Bo;
};

struct Verdict {
  VerdictKind kind = VerdictKind::Upper;
  std::optional<Witness> witness;  // present on Lower
  std::vector<Lemma> lemmas;
  std::vector<PairRecord> pairs;
  bool certified = true;  // false when the certifier was disabled
};

struct BracketStep {
  Rational threshold;
  VerdictKind kind = VerdictKind::Upper;
};

struct ThresholdResult {
  Rational threshold;  // certified lower bound T
  Rational epsilon;
  std::optional<Witness> witness;
  std::size_t iterations = 0;  // verdict runs performed
  std::vector<BracketStep> bracket;
  std::vector<PairRecord> pairs;
  bool timed_out = false;
  bool certified = true;
};

// Counters and timers accumulated across one optimize run, split by phase
// (candidate vs counter-example) and by engine (certifier vs BO) and outcome.
struct PhaseStats {
  std::size_t cert_candidate_sat = 0;    // certifier found a candidate
  std::size_t cert_candidate_unsat = 0;  // certifier proved no candidate
  std::size_t cert_counter_sat = 0;      // certifier found a counter-example
  std::size_t cert_counter_unsat = 0;    // certifier proved stability
  double cert_candidate_sat_s = 0, cert_candidate_unsat_s = 0;
  double cert_counter_sat_s = 0, cert_counter_unsat_s = 0;

  std::size_t bo_candidate_suggests = 0, bo_counter_suggests = 0;
  std::size_t bo_candidate_found = 0, bo_candidate_missed = 0;
  std::size_t bo_counter_found = 0, bo_counter_missed = 0;
  std::size_t bo_faults = 0;
  double bo_candidate_found_s = 0, bo_candidate_missed_s = 0;
  double bo_counter_found_s = 0, bo_counter_missed_s = 0;
};

struct SolverConfig {
  Rational delta = 0;
  Rational epsilon = Rational(1, 100);
  std::size_t max_iter_candidates = 50;      // suggestions per candidate search
  std::size_t max_iter_counterexamples = 20; // suggestions per counter-example search
  std::size_t n0 = 10;      // initial design of the persistent candidate GP
  std::size_t k_seeds = 5;  // counter-example seeds (center + Latin hypercube)
  bool use_bo_candidates = true;
  bool use_bo_counterexamples = true;
  bool use_certifier = true;  // false: BO-only mode, verdicts are uncertified
  std::uint64_t seed = 1;
  BoConfig bo;
  CertifierConfig certifier;
  bool external_backend = false;
  std::string solver_cmd;
  std::optional<std::chrono::steady_clock::time_point> deadline;
};

class GearSolver {
 public:
  GearSolver(PwlModel model, Guard guard, Box domain, SolverConfig cfg)
      : model_(std::move(model)),
        guard_(std::move(guard)),
        domain_(std::move(domain)),
        cfg_(std::move(cfg)),
        form_(to_constraints(model_)),
        certifier_(cfg_.certifier) {
    if (domain_.dim() != model_.input_dim())
      throw InputError("solver: domain dimension does not match the model");
    if (!(cfg_.epsilon > 0)) throw InputError("solver: epsilon must be positive");
    if (cfg_.delta < 0) throw InputError("solver: delta must be nonnegative");
    if (cfg_.n0 == 0 || cfg_.k_seeds == 0)
      throw InputError("solver: initial design sizes must be positive");
  }

  const PhaseStats& stats() const { return stats_; }
  void reset_stats() { stats_ = PhaseStats{}; }
  const ConstraintForm& form() const { return form_; }

  // Counter-example search: seed the guard region around `center`, then run a
  // fresh minimizing GP; any exactly-evaluated f(d) < T returns early. The
  // caller falls back to a certifier query when this returns nullopt.
  std::optional<RatVec> find_counterexample(const RatVec& center, const Rational& T,
                                            std::uint64_t search_seed) {
    Box region = region_bounds(guard_, center, domain_);
    std::size_t n = region.dim();
    try {
      std::vector<std::vector<double>> xs;
      std::vector<RatVec> exact;
      exact.push_back(center);
      RandomEngine eng(derive_seed(search_seed, "ce-seeds"));
      auto lhs = latin_hypercube(eng, cfg_.k_seeds - 1, n);
      for (const auto& unit : lhs) {
        RatVec p(n);
        for (std::size_t i = 0; i < n; ++i)
          p[i] = region.lower[i] +
                 rational_from_double(unit[i]) * (region.upper[i] - region.lower[i]);
        exact.push_back(region.clamp(p));
      }
      std::vector<double> ys;
      for (const RatVec& p : exact) {
        Rational fp = model_.evaluate(p);
        if (fp < T) return p;
        xs.push_back(to_double(p));
        ys.push_back(to_double(fp));
      }

      std::vector<double> lo = to_double(region.lower), hi = to_double(region.upper);
      for (auto& x : xs)
        for (std::size_t i = 0; i < n; ++i) x[i] = std::min(std::max(x[i], lo[i]), hi[i]);
      GpState gp = gp_init(lo, hi, xs, ys, Direction::Minimize, cfg_.bo, search_seed);
      for (std::size_t it = 0; it < cfg_.max_iter_counterexamples; ++it) {
        std::vector<double> proposal = gp_suggest(gp);
        ++stats_.bo_counter_suggests;
        RatVec d = region.clamp(rationalize(proposal));
        Rational fd = model_.evaluate(d);
        if (fd < T) return d;
        gp_observe(gp, proposal, to_double(fd));
      }
    } catch (const Error&) {
      ++stats_.bo_faults;
    }
    return std::nullopt;
  }

  // Candidate search over the persistent maximizing GP. Suggestions falling
  // inside the guard region of a recorded counter-example are penalized with
  // that counter-example's value, so z >= T certifies both eligibility and
  // f(c) >= T. Lemmas are scanned most recent first.
  std::optional<RatVec> find_candidate(const Rational& T, const std::vector<Lemma>& lemmas,
                                       GpState& gp,
                                       std::optional<std::pair<RatVec, Rational>>& prev) {
    try {
      if (prev) {
        std::vector<double> cx = to_double(prev->first);
        for (std::size_t i = 0; i < cx.size(); ++i)
          cx[i] = std::min(std::max(cx[i], gp.lo[i]), gp.hi[i]);
        gp_observe(gp, cx, to_double(prev->second));
        prev.reset();
      }
      for (std::size_t it = 0; it < cfg_.max_iter_candidates; ++it) {
        std::vector<double> proposal = gp_suggest(gp);
        ++stats_.bo_candidate_suggests;
        RatVec c = domain_.clamp(rationalize(proposal));
        Rational z;
        bool penalized = false;
        for (std::size_t m = lemmas.size(); m-- > 0;) {
          if (theta_holds(guard_, c, lemmas[m].d)) {
            z = lemmas[m].fd;
            penalized = true;
            break;
          }
        }
        if (!penalized) z = model_.evaluate(c);
        if (z >= T) return c;
        gp_observe(gp, proposal, to_double(z));
      }
    } catch (const Error&) {
      ++stats_.bo_faults;
    }
    return std::nullopt;
  }

  // The verdict loop: alternate candidate search (under the learned
  // exclusions) and counter-example search (inside the candidate's guard
  // region) until a candidate survives (Lower) or none exists (Upper).
  Verdict gearsat_delta(const Rational& T, std::uint64_t run_tag) {
    Verdict v;
    std::optional<GpState> cand_gp;
    if (cfg_.use_bo_candidates) cand_gp = init_candidate_gp(run_tag);
    std::optional<std::pair<RatVec, Rational>> prev;

    for (std::size_t iter = 0;; ++iter) {
      check_deadline();

      // candidate phase
      std::optional<RatVec> c;
      PointSource c_source = PointSource::Bo;
      if (cfg_.use_bo_candidates && cand_gp) {
        Timer t;
        c = find_candidate(T, v.lemmas, *cand_gp, prev);
        if (c) {
          ++stats_.bo_candidate_found;
          stats_.bo_candidate_found_s += t.seconds();
        } else {
          ++stats_.bo_candidate_missed;
          stats_.bo_candidate_missed_s += t.seconds();
        }
      }
      if (!c) {
        if (!cfg_.use_certifier) {
          v.kind = VerdictKind::Upper;
          v.certified = false;
          return v;
        }
        Query q;
        q.form = form_;
        q.domain = domain_;
        q.sense = ThresholdSense::GeqT;
        q.threshold = T;
        q.lemmas = v.lemmas;
        Timer t;
        std::optional<Witness> w = run_certifier(q, T, v.lemmas.size());
        if (w) {
          ++stats_.cert_candidate_sat;
          stats_.cert_candidate_sat_s += t.seconds();
          c = w->x;
          c_source = PointSource::Certifier;
        } else {
          ++stats_.cert_candidate_unsat;
          stats_.cert_candidate_unsat_s += t.seconds();
          v.kind = VerdictKind::Upper;
          return v;
        }
      }
      Rational fc = model_.evaluate(*c);

      // counter-example phase
      std::optional<RatVec> d;
      PointSource d_source = PointSource::Bo;
      if (cfg_.use_bo_counterexamples) {
        std::uint64_t s = derive_seed(derive_seed(cfg_.seed, "ce", run_tag), "round", iter);
        Timer t;
        d = find_counterexample(*c, T, s);
        if (d) {
          ++stats_.bo_counter_found;
          stats_.bo_counter_found_s += t.seconds();
        } else {
          ++stats_.bo_counter_missed;
          stats_.bo_counter_missed_s += t.seconds();
        }
      }
      if (!d) {
        if (!cfg_.use_certifier) {
          v.kind = VerdictKind::Lower;
          v.witness = Witness{*c, fc};
          v.certified = false;
          return v;
        }
        Query q;
        q.form = form_;
        q.domain = domain_;
        q.region = region_bounds(guard_, *c, domain_);
        q.sense = ThresholdSense::LtT;
        q.threshold = T;
        q.prefer_near = *c;  // nearest refutation gives the widest exclusion
        Timer t;
        std::optional<Witness> w = run_certifier(q, T, v.lemmas.size());
        if (w) {
          ++stats_.cert_counter_sat;
          stats_.cert_counter_sat_s += t.seconds();
          d = w->x;
          d_source = PointSource::Certifier;
        } else {
          ++stats_.cert_counter_unsat;
          stats_.cert_counter_unsat_s += t.seconds();
          v.kind = VerdictKind::Lower;
          v.witness = Witness{*c, fc};
          return v;
        }
      }
      Rational fd = model_.evaluate(*d);
      v.pairs.push_back(PairRecord{*c, *d, fc, fd, T, c_source, d_source});
      v.lemmas.push_back(make_lemma(guard_, *d, fd, cfg_.delta));
      prev = std::make_pair(*c, fd);
    }
  }

  // Binary search on the certified bracket. interval_bound soundly encloses
  // every achievable objective value, hence the max-min optimum as well.
  ThresholdResult optimize() {
    auto [lo, hi] = model_.interval_bound(domain_);
    ThresholdResult res;
    res.epsilon = cfg_.epsilon;
    res.certified = cfg_.use_certifier;
    std::uint64_t run_tag = 0;

    try {
      while (hi - lo > cfg_.epsilon) {
        Rational mid = (lo + hi) / 2;
        Verdict v = gearsat_delta(mid, run_tag++);
        res.bracket.push_back(BracketStep{mid, v.kind});
        append_pairs(res, v);
        if (v.kind == VerdictKind::Lower) {
          lo = mid;
          res.witness = v.witness;
        } else {
          hi = mid;
        }
      }
      // A Lower witness at lo itself; when every probe came back Upper (or
      // the bracket started degenerate) this is the only certified run.
      if (!res.witness) {
        Verdict v = gearsat_delta(lo, run_tag++);
        res.bracket.push_back(BracketStep{lo, v.kind});
        append_pairs(res, v);
        if (v.kind == VerdictKind::Lower) {
          res.witness = v.witness;
        } else if (cfg_.use_certifier) {
          throw Error("solver: interval lower bound failed to certify");
        }
      }
    } catch (const TimeoutError&) {
      res.timed_out = true;
    }
    res.threshold = lo;
    res.iterations = run_tag;
    return res;
  }

 private:
  PwlModel model_;
  Guard guard_;
  Box domain_;
  SolverConfig cfg_;
  ConstraintForm form_;
  Certifier certifier_;
  PhaseStats stats_;

  struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };

  void check_deadline() const {
    if (cfg_.deadline && std::chrono::steady_clock::now() > *cfg_.deadline)
      throw TimeoutError("solver: wall-clock budget exhausted");
  }

  static RatVec rationalize(const std::vector<double>& x) {
    RatVec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = rational_from_double(x[i]);
    return out;
  }

  GpState init_candidate_gp(std::uint64_t run_tag) {
    std::size_t n = domain_.dim();
    RandomEngine eng(derive_seed(derive_seed(cfg_.seed, "cand", run_tag), "init"));
    auto lhs = latin_hypercube(eng, cfg_.n0, n);
    std::vector<std::vector<double>> xs;
    std::vector<double> ys;
    for (const auto& unit : lhs) {
      RatVec p(n);
      for (std::size_t i = 0; i < n; ++i)
        p[i] = domain_.lower[i] +
               rational_from_double(unit[i]) * (domain_.upper[i] - domain_.lower[i]);
      p = domain_.clamp(p);
      xs.push_back(to_double(p));
      ys.push_back(to_double(model_.evaluate(p)));
    }
    std::vector<double> lo = to_double(domain_.lower), hi = to_double(domain_.upper);
    for (auto& x : xs)
      for (std::size_t i = 0; i < n; ++i) x[i] = std::min(std::max(x[i], lo[i]), hi[i]);
    return gp_init(lo, hi, xs, ys, Direction::Maximize, cfg_.bo,
                   derive_seed(cfg_.seed, "cand", run_tag));
  }

  std::optional<Witness> run_certifier(const Query& q, const Rational& T, std::size_t nlemmas) {
    try {
      if (cfg_.external_backend) return external_solve(q, cfg_.solver_cmd);
      return certifier_.solve(q);
    } catch (const CapacityError& e) {
      throw CapacityError(std::string(e.what()) + " (threshold " + T.str() + ", " +
                          std::to_string(nlemmas) + " lemmas learned)");
    } catch (const TimeoutError& e) {
      throw TimeoutError(std::string(e.what()) + " (threshold " + T.str() + ", " +
                         std::to_string(nlemmas) + " lemmas learned)");
    }
  }

  static void append_pairs(ThresholdResult& res, const Verdict& v) {
    res.pairs.insert(res.pairs.end(), v.pairs.begin(), v.pairs.end());
  }
};

// Independent re-check of a Lower verdict: a fresh certifier must find no
// point of the witness's guard region below the threshold.
inline bool reverify_lower(const PwlModel& model, const Guard& guard, const Box& domain,
                           const Witness& w, const Rational& T, CertifierConfig cc = {}) {
  Certifier cert(cc);
  Query q;
  q.form = to_constraints(model);
  q.domain = domain;
  q.region = region_bounds(guard, w.x, domain);
  q.sense = ThresholdSense::LtT;
  q.threshold = T;
  return !cert.solve(q).has_value();
}

}  // namespace stabopt
