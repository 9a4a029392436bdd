#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stabopt/rational.hpp"
#include "stabopt/rng.hpp"

namespace stabopt {

enum class KernelKind { Rbf, Matern52 };
enum class AcqKind { Ei, Pi, Lcb };
enum class Direction { Maximize, Minimize };

struct AcquisitionSpec {
  AcqKind kind = AcqKind::Ei;
  double kappa = 1.96;  // only read by Lcb
};

struct BoConfig {
  KernelKind kernel = KernelKind::Matern52;
  double length_scale = 0.25;  // per dimension, in normalized [0,1] coordinates
  bool tune_length_scale = false;
  double signal_variance = 1.0;  // sigma_f^2
  double jitter = 1e-10;         // sigma_n^2 on the Gram diagonal
  std::vector<AcquisitionSpec> portfolio = {{AcqKind::Ei, 1.96},
                                            {AcqKind::Pi, 1.96},
                                            {AcqKind::Lcb, 1.96}};
  double hedge_eta = 1.0;
  int probes = 512;
  int refine_passes = 20;
  std::size_t window = 300;
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
}

// Score to MAXIMIZE for the given search direction. sigma = 0 collapses to
// the deterministic improvement.
inline double acquisition_value(const AcquisitionSpec& acq, double mu, double sigma, double best,
                                Direction dir) {
  if (sigma < 0) throw InputError("acquisition_value: negative sigma");
  double improvement = dir == Direction::Maximize ? mu - best : best - mu;
  switch (acq.kind) {
    case AcqKind::Ei: {
      if (sigma == 0) return std::max(improvement, 0.0);
      double z = improvement / sigma;
      return sigma * (z * normal_cdf(z) + normal_pdf(z));
    }
    case AcqKind::Pi: {
      if (sigma == 0) return improvement > 0 ? 1.0 : 0.0;
      return normal_cdf(improvement / sigma);
    }
    case AcqKind::Lcb: {
      double m = dir == Direction::Maximize ? mu : -mu;
      return m + acq.kappa * sigma;
    }
  }
  return 0;
}

// GP regression state over a box, with a hedge portfolio of acquisitions.
// Value-type: copy it to fork a search. Inputs are normalized to the unit
// box before touching the kernel.
struct GpState {
  std::vector<double> lo, hi;
  Direction direction = Direction::Maximize;
  BoConfig config;
  std::uint64_t seed = 0;

  Eigen::MatrixXd X;  // normalized rows
  Eigen::VectorXd y;
  Eigen::MatrixXd chol;     // lower factor of K + jitter*I
  Eigen::VectorXd alpha;    // (K + jitter*I)^{-1} y
  double jitter_used = 0;
  double length_scale = 0.25;

  std::vector<double> gains;                        // per portfolio entry
  std::vector<std::vector<double>> last_proposals;  // normalized, per portfolio entry
  std::uint64_t observe_count = 0;

  mutable double min_preclamp_variance = 0;  // most negative pre-clamp posterior variance seen

  std::size_t dim() const { return lo.size(); }
  std::size_t size() const { return static_cast<std::size_t>(X.rows()); }
};

namespace detail_gp {

inline double kernel_eval(const GpState& gp, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double r2 = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double d = (a[i] - b[i]) / gp.length_scale;
    r2 += d * d;
  }
  if (gp.config.kernel == KernelKind::Rbf) return gp.config.signal_variance * std::exp(-0.5 * r2);
  double r = std::sqrt(5.0 * r2);
  return gp.config.signal_variance * (1.0 + r + r * r / 3.0) * std::exp(-r);
}

inline Eigen::VectorXd normalize(const GpState& gp, const std::vector<double>& x) {
  Eigen::VectorXd z(static_cast<Eigen::Index>(gp.dim()));
  for (std::size_t i = 0; i < gp.dim(); ++i) {
    double w = gp.hi[i] - gp.lo[i];
    z[static_cast<Eigen::Index>(i)] = w > 0 ? (x[i] - gp.lo[i]) / w : 0.0;
  }
  return z;
}

inline std::vector<double> denormalize(const GpState& gp, const std::vector<double>& z) {
  std::vector<double> x(gp.dim());
  for (std::size_t i = 0; i < gp.dim(); ++i) {
    x[i] = gp.lo[i] + z[i] * (gp.hi[i] - gp.lo[i]);
    x[i] = std::min(std::max(x[i], gp.lo[i]), gp.hi[i]);
  }
  return x;
}

// Full refit; escalates the jitter a few decades when the Gram matrix is not
// numerically positive definite (duplicate samples make it singular).
inline void refit(GpState& gp) {
  Eigen::Index m = gp.X.rows();
  Eigen::MatrixXd K(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      double v = kernel_eval(gp, gp.X.row(i), gp.X.row(j));
      K(i, j) = v;
      K(j, i) = v;
    }
  double jit = gp.config.jitter;
  for (;;) {
    Eigen::LLT<Eigen::MatrixXd> llt(K + jit * Eigen::MatrixXd::Identity(m, m));
    if (llt.info() == Eigen::Success) {
      gp.chol = llt.matrixL();
      gp.alpha = llt.solve(gp.y);
      gp.jitter_used = jit;
      return;
    }
    jit *= 100;
    if (jit > 1e-4) throw Error("gp: Gram matrix not positive definite even with escalated jitter");
  }
}

inline double log_marginal_likelihood(const GpState& gp) {
  double quad = gp.y.dot(gp.alpha);
  double logdet = 0;
  for (Eigen::Index i = 0; i < gp.chol.rows(); ++i) logdet += std::log(gp.chol(i, i));
  double m = static_cast<double>(gp.chol.rows());
  return -0.5 * quad - logdet - 0.5 * m * std::log(2.0 * M_PI);
}

inline std::pair<double, double> posterior_normalized(const GpState& gp, const Eigen::VectorXd& z) {
  Eigen::Index m = gp.X.rows();
  Eigen::VectorXd k(m);
  for (Eigen::Index i = 0; i < m; ++i) k[i] = kernel_eval(gp, gp.X.row(i), z);
  double mu = k.dot(gp.alpha);
  Eigen::VectorXd v = gp.chol.triangularView<Eigen::Lower>().solve(k);
  double var = kernel_eval(gp, z, z) - v.squaredNorm();
  gp.min_preclamp_variance = std::min(gp.min_preclamp_variance, var);
  if (var < 0) var = 0;
  return {mu, std::sqrt(var)};
}

inline double best_observed(const GpState& gp) {
  return gp.direction == Direction::Maximize ? gp.y.maxCoeff() : gp.y.minCoeff();
}

// Multi-start random probing followed by coordinate descent with a shrinking
// step, all over the normalized unit box.
inline std::vector<double> maximize_acquisition(const GpState& gp, const AcquisitionSpec& acq,
                                                RandomEngine& eng) {
  std::size_t d = gp.dim();
  double best_val = -std::numeric_limits<double>::infinity();
  std::vector<double> best(d, 0.5);
  double fbest = best_observed(gp);
  Eigen::VectorXd z(static_cast<Eigen::Index>(d));

  auto score = [&](const std::vector<double>& pt) {
    for (std::size_t i = 0; i < d; ++i) z[static_cast<Eigen::Index>(i)] = pt[i];
    auto [mu, sigma] = posterior_normalized(gp, z);
    return acquisition_value(acq, mu, sigma, fbest, gp.direction);
  };

  std::vector<double> pt(d);
  for (int p = 0; p < gp.config.probes; ++p) {
    for (std::size_t i = 0; i < d; ++i) pt[i] = uniform01(eng);
    double v = score(pt);
    if (v > best_val) {
      best_val = v;
      best = pt;
    }
  }
  double step = 0.25;
  for (int pass = 0; pass < gp.config.refine_passes; ++pass) {
    for (std::size_t i = 0; i < d; ++i) {
      for (double dir : {+1.0, -1.0}) {
        std::vector<double> cand = best;
        cand[i] = std::min(std::max(cand[i] + dir * step, 0.0), 1.0);
        double v = score(cand);
        if (v > best_val) {
          best_val = v;
          best = cand;
        }
      }
    }
    step *= 0.7;
  }
  return best;
}

}  // namespace detail_gp

inline GpState gp_init(const std::vector<double>& lo, const std::vector<double>& hi,
                       const std::vector<std::vector<double>>& xs, const std::vector<double>& ys,
                       Direction direction, const BoConfig& config, std::uint64_t seed) {
  if (lo.empty() || lo.size() != hi.size()) throw InputError("gp_init: bad bounds");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (lo[i] > hi[i]) throw InputError("gp_init: lower bound exceeds upper bound");
  if (xs.empty()) throw InputError("gp_init: need at least one sample");
  if (xs.size() != ys.size()) throw InputError("gp_init: sample/value count mismatch");
  const double slack = 1e-9;
  for (const auto& x : xs) {
    if (x.size() != lo.size()) throw InputError("gp_init: sample dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < lo[i] - slack || x[i] > hi[i] + slack)
        throw InputError("gp_init: sample outside bounds");
  }
  for (double v : ys)
    if (!std::isfinite(v)) throw InputError("gp_init: non-finite sample value");
  if (config.portfolio.empty()) throw InputError("gp_init: empty acquisition portfolio");

  GpState gp;
  gp.lo = lo;
  gp.hi = hi;
  gp.direction = direction;
  gp.config = config;
  gp.seed = seed;
  gp.length_scale = config.length_scale;
  gp.gains.assign(config.portfolio.size(), 0.0);

  gp.X.resize(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(lo.size()));
  gp.y.resize(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    gp.X.row(static_cast<Eigen::Index>(i)) = detail_gp::normalize(gp, xs[i]);
    gp.y[static_cast<Eigen::Index>(i)] = ys[i];
  }

  if (config.tune_length_scale) {
    double best_ll = -std::numeric_limits<double>::infinity();
    double best_ell = config.length_scale;
    for (double ell : {0.1, 0.25, 0.5, 1.0}) {
      gp.length_scale = ell;
      detail_gp::refit(gp);
      double ll = detail_gp::log_marginal_likelihood(gp);
      if (ll > best_ll) {
        best_ll = ll;
        best_ell = ell;
      }
    }
    gp.length_scale = best_ell;
  }
  detail_gp::refit(gp);
  return gp;
}

inline std::pair<double, double> gp_posterior(const GpState& gp, const std::vector<double>& x) {
  if (x.size() != gp.dim()) throw InputError("gp_posterior: dimension mismatch");
  return detail_gp::posterior_normalized(gp, detail_gp::normalize(gp, x));
}

// Every portfolio member proposes its own maximizer; one proposal is chosen
// with probability proportional to exp(eta * gain). The RNG stream derives
// from (seed, observe_count), so repeated suggests without an intervening
// observe are identical.
inline std::vector<double> gp_suggest(GpState& gp) {
  RandomEngine eng(derive_seed(gp.seed, 0x5347u, gp.observe_count));
  gp.last_proposals.clear();
  for (const AcquisitionSpec& acq : gp.config.portfolio)
    gp.last_proposals.push_back(detail_gp::maximize_acquisition(gp, acq, eng));

  double gmax = *std::max_element(gp.gains.begin(), gp.gains.end());
  std::vector<double> w(gp.gains.size());
  double total = 0;
  for (std::size_t i = 0; i < gp.gains.size(); ++i) {
    w[i] = std::exp(gp.config.hedge_eta * (gp.gains[i] - gmax));
    total += w[i];
  }
  double u = uniform01(eng) * total;
  std::size_t chosen = w.size() - 1;
  double acc = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (u < acc) {
      chosen = i;
      break;
    }
  }
  return detail_gp::denormalize(gp, gp.last_proposals[chosen]);
}

// Current hedge distribution (softmax of gains); sums to one.
inline std::vector<double> hedge_probabilities(const GpState& gp) {
  double gmax = *std::max_element(gp.gains.begin(), gp.gains.end());
  std::vector<double> p(gp.gains.size());
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(gp.config.hedge_eta * (gp.gains[i] - gmax));
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

inline void gp_observe(GpState& gp, const std::vector<double>& x, double yval) {
  if (x.size() != gp.dim()) throw InputError("gp_observe: dimension mismatch");
  if (!std::isfinite(yval)) throw InputError("gp_observe: non-finite value");
  const double slack = 1e-9;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < gp.lo[i] - slack || x[i] > gp.hi[i] + slack)
      throw InputError("gp_observe: point outside bounds");

  Eigen::Index m = gp.X.rows();
  gp.X.conservativeResize(m + 1, Eigen::NoChange);
  gp.X.row(m) = detail_gp::normalize(gp, x);
  gp.y.conservativeResize(m + 1);
  gp.y[m] = yval;

  // Window cap: drop the oldest sample that is not the incumbent best.
  if (gp.size() > gp.config.window) {
    Eigen::Index best_i = 0;
    for (Eigen::Index i = 1; i < gp.y.size(); ++i) {
      bool better = gp.direction == Direction::Maximize ? gp.y[i] > gp.y[best_i]
                                                        : gp.y[i] < gp.y[best_i];
      if (better) best_i = i;
    }
    Eigen::Index drop = best_i == 0 ? 1 : 0;
    Eigen::Index rows = gp.X.rows();
    for (Eigen::Index i = drop; i + 1 < rows; ++i) {
      gp.X.row(i) = gp.X.row(i + 1);
      gp.y[i] = gp.y[i + 1];
    }
    gp.X.conservativeResize(rows - 1, Eigen::NoChange);
    gp.y.conservativeResize(rows - 1);
  }

  detail_gp::refit(gp);

  // gp_hedge: reward every acquisition with the refreshed posterior mean at
  // its own last proposal, signed so that larger is better.
  if (gp.last_proposals.size() == gp.gains.size()) {
    for (std::size_t i = 0; i < gp.gains.size(); ++i) {
      auto [mu, sigma] = detail_gp::posterior_normalized(
          gp, Eigen::Map<const Eigen::VectorXd>(gp.last_proposals[i].data(),
                                                static_cast<Eigen::Index>(gp.dim())));
      (void)sigma;
      gp.gains[i] += gp.direction == Direction::Maximize ? mu : -mu;
    }
  }
  gp.last_proposals.clear();
  ++gp.observe_count;
}

}  // namespace stabopt
