#pragma once

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "stabopt/gearsat.hpp"

namespace stabopt {

// ---- indicators ----------------------------------------------------------------
//
// One row of the experiment table. Timer fields carry millisecond resolution
// so an emitted CSV row parses back to exactly the same values.

struct Indicators {
  Rational T;
  bool timed_out = false;  // printed as a "≥" prefix on T
  std::size_t N_cap = 0, N_can = 0, N_ce = 0, N_sa = 0;
  double T_cap = 0, T_can = 0, T_ce = 0, T_sa = 0;
  std::size_t n_cai = 0, n_cci = 0;
  std::size_t n_cap = 0, n_can = 0, n_ce = 0, n_sa = 0, n_un = 0;
  double t_cap = 0, t_can = 0, t_ce = 0, t_sa = 0;
  double time = 0;
};

inline double round_ms(double seconds) { return std::round(seconds * 1000.0) / 1000.0; }

inline void zero_timers(Indicators& ind) {
  ind.T_cap = ind.T_can = ind.T_ce = ind.T_sa = 0;
  ind.t_cap = ind.t_can = ind.t_ce = ind.t_sa = 0;
  ind.time = 0;
}

inline std::string indicators_csv_header() {
  return "key,T,N_cap,N_can,N_ce,N_sa,T_cap,T_can,T_ce,T_sa,"
         "n_cai,n_cci,n_cap,n_can,n_ce,n_sa,n_un,t_cap,t_can,t_ce,t_sa,time";
}

namespace detail_harness {

inline std::string fmt_seconds(double s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", s);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace detail_harness

inline std::string indicators_csv_row(const std::string& key, const Indicators& ind) {
  using detail_harness::fmt_seconds;
  std::ostringstream os;
  os << key << ',';
  if (ind.timed_out) os << "≥";
  os << ind.T.str() << ',';
  os << ind.N_cap << ',' << ind.N_can << ',' << ind.N_ce << ',' << ind.N_sa << ',';
  os << fmt_seconds(ind.T_cap) << ',' << fmt_seconds(ind.T_can) << ',' << fmt_seconds(ind.T_ce)
     << ',' << fmt_seconds(ind.T_sa) << ',';
  os << ind.n_cai << ',' << ind.n_cci << ',';
  os << ind.n_cap << ',' << ind.n_can << ',' << ind.n_ce << ',' << ind.n_sa << ',' << ind.n_un
     << ',';
  os << fmt_seconds(ind.t_cap) << ',' << fmt_seconds(ind.t_can) << ',' << fmt_seconds(ind.t_ce)
     << ',' << fmt_seconds(ind.t_sa) << ',';
  os << fmt_seconds(ind.time);
  return os.str();
}

inline std::pair<std::string, Indicators> indicators_from_csv_row(const std::string& line) {
  std::vector<std::string> cells = detail_harness::split_csv(line);
  if (cells.size() != 22) throw InputError("indicator row: expected 22 cells");
  Indicators ind;
  std::string key = cells[0];
  std::string tcell = cells[1];
  const std::string geq = "≥";
  if (tcell.rfind(geq, 0) == 0) {
    ind.timed_out = true;
    tcell = tcell.substr(geq.size());
  }
  ind.T = parse_rational(tcell);
  auto count = [&](std::size_t i) { return static_cast<std::size_t>(std::stoull(cells[i])); };
  auto secs = [&](std::size_t i) { return std::stod(cells[i]); };
  ind.N_cap = count(2);
  ind.N_can = count(3);
  ind.N_ce = count(4);
  ind.N_sa = count(5);
  ind.T_cap = secs(6);
  ind.T_can = secs(7);
  ind.T_ce = secs(8);
  ind.T_sa = secs(9);
  ind.n_cai = count(10);
  ind.n_cci = count(11);
  ind.n_cap = count(12);
  ind.n_can = count(13);
  ind.n_ce = count(14);
  ind.n_sa = count(15);
  ind.n_un = count(16);
  ind.t_cap = secs(17);
  ind.t_can = secs(18);
  ind.t_ce = secs(19);
  ind.t_sa = secs(20);
  ind.time = secs(21);
  return {key, ind};
}

// ---- problem specification -------------------------------------------------------

struct ProblemSpec {
  std::string name = "instance";
  PwlModel model;
  Box domain;
  Guard guard;
  SolverConfig solver;
  double budget_s = 300.0;

  explicit ProblemSpec(PwlModel m) : model(std::move(m)) {}
};

namespace detail_harness {

inline void apply_solver_json(SolverConfig& cfg, const nlohmann::json& j) {
  if (j.contains("epsilon")) cfg.epsilon = rational_from_json(j.at("epsilon"), "epsilon");
  if (j.contains("delta")) cfg.delta = rational_from_json(j.at("delta"), "delta");
  if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("flags")) {
    const auto& f = j.at("flags");
    if (f.contains("candidates")) cfg.use_bo_candidates = f.at("candidates").get<bool>();
    if (f.contains("counterexamples"))
      cfg.use_bo_counterexamples = f.at("counterexamples").get<bool>();
  }
  if (j.contains("certifier_enabled")) cfg.use_certifier = j.at("certifier_enabled").get<bool>();
  if (j.contains("bo")) {
    const auto& b = j.at("bo");
    if (b.contains("max_iter_candidates"))
      cfg.max_iter_candidates = b.at("max_iter_candidates").get<std::size_t>();
    if (b.contains("max_iter_counterexamples"))
      cfg.max_iter_counterexamples = b.at("max_iter_counterexamples").get<std::size_t>();
    if (b.contains("n0")) cfg.n0 = b.at("n0").get<std::size_t>();
    if (b.contains("k_seeds")) cfg.k_seeds = b.at("k_seeds").get<std::size_t>();
    if (b.contains("kernel")) {
      std::string k = b.at("kernel").get<std::string>();
      if (k == "rbf")
        cfg.bo.kernel = KernelKind::Rbf;
      else if (k == "matern52")
        cfg.bo.kernel = KernelKind::Matern52;
      else
        throw InputError("spec: unknown kernel '" + k + "'");
    }
    if (b.contains("length_scale")) cfg.bo.length_scale = b.at("length_scale").get<double>();
    if (b.contains("tune_length_scale"))
      cfg.bo.tune_length_scale = b.at("tune_length_scale").get<bool>();
  }
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    if (b.contains("kind")) {
      std::string k = b.at("kind").get<std::string>();
      if (k == "builtin")
        cfg.external_backend = false;
      else if (k == "external")
        cfg.external_backend = true;
      else
        throw InputError("spec: unknown backend kind '" + k + "'");
    }
    if (b.contains("solver_cmd")) cfg.solver_cmd = b.at("solver_cmd").get<std::string>();
    if (b.contains("relu_cap")) cfg.certifier.relu_cap = b.at("relu_cap").get<std::size_t>();
    if (b.contains("solve_timeout_s"))
      cfg.certifier.timeout_s = b.at("solve_timeout_s").get<double>();
  }
}

}  // namespace detail_harness

// Loads a problem spec. The model is given inline under "model" or referenced
// by path (resolved relative to the spec file's directory). A "domain" in the
// spec wins over one stored next to the model.
inline ProblemSpec spec_from_json(const nlohmann::json& j, const std::string& base_dir,
                                  const std::string& default_name) {
  if (!j.contains("model")) throw InputError("spec: missing \"model\"");
  nlohmann::json model_json;
  if (j.at("model").is_string()) {
    std::filesystem::path p = j.at("model").get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    std::ifstream in(p);
    if (!in) throw InputError("spec: cannot open model file " + p.string());
    in >> model_json;
  } else {
    model_json = j.at("model");
  }

  ProblemSpec spec(model_from_json(model_json));
  spec.name = j.value("name", default_name);

  if (j.contains("domain"))
    spec.domain = box_from_json(j.at("domain"), "spec domain");
  else if (model_json.contains("domain"))
    spec.domain = box_from_json(model_json.at("domain"), "model domain");
  else
    throw InputError("spec: no domain given (neither in the spec nor beside the model)");
  if (spec.domain.dim() != spec.model.input_dim())
    throw InputError("spec: domain dimension does not match the model");

  if (j.contains("guard"))
    spec.guard = guard_from_json(j.at("guard"));
  else
    spec.guard = Guard::abs_box(Rational(1, 10));

  detail_harness::apply_solver_json(spec.solver, j);
  if (j.contains("budget_s")) spec.budget_s = j.at("budget_s").get<double>();
  return spec;
}

inline ProblemSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open spec file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("spec " + path + ": " + e.what());
  }
  std::filesystem::path p(path);
  return spec_from_json(j, p.parent_path().string(), p.stem().string());
}

// ---- instance generation ----------------------------------------------------------

struct Instance {
  std::string name;
  PwlModel model;
  Box domain;
};

// h(x) = 1 - |x| built from two ReLU units.
inline Instance make_hat() {
  std::vector<Layer> layers;
  layers.push_back(Layer{{{Rational(1)}, {Rational(-1)}}, {Rational(0), Rational(0)},
                         Activation::Relu});
  layers.push_back(Layer{{{Rational(-1), Rational(-1)}}, {Rational(1)}, Activation::Identity});
  RatVec lo{Rational(-1)}, hi{Rational(1)};
  return Instance{"hat", PwlModel(1, std::move(layers)), Box(lo, hi)};
}

// f(x1,x2) = 1 - max(|x1|, |x2|): absolute values from four ReLU units, the
// max via max(a,b) = a + relu(b - a), with `a` passed through a ReLU it never
// activates negatively (a = |x1| >= 0).
inline Instance make_pyramid() {
  std::vector<Layer> layers;
  layers.push_back(Layer{{{Rational(1), Rational(0)},
                          {Rational(-1), Rational(0)},
                          {Rational(0), Rational(1)},
                          {Rational(0), Rational(-1)}},
                         RatVec(4, Rational(0)),
                         Activation::Relu});
  layers.push_back(Layer{{{Rational(1), Rational(1), Rational(0), Rational(0)},
                          {Rational(-1), Rational(-1), Rational(1), Rational(1)}},
                         RatVec(2, Rational(0)),
                         Activation::Relu});
  layers.push_back(Layer{{{Rational(-1), Rational(-1)}}, {Rational(1)}, Activation::Identity});
  RatVec lo{Rational(-1), Rational(-1)}, hi{Rational(1), Rational(1)};
  return Instance{"pyramid", PwlModel(2, std::move(layers)), Box(lo, hi)};
}

inline Instance make_constant(Rational value) {
  std::vector<Layer> layers;
  layers.push_back(Layer{{{Rational(0)}}, {std::move(value)}, Activation::Identity});
  RatVec lo{Rational(-1)}, hi{Rational(1)};
  return Instance{"constant", PwlModel(1, std::move(layers)), Box(lo, hi)};
}

// Random ReLU network with weights and biases drawn uniformly from the
// denominator-1024 rationals in [-1, 1]; deterministic in the seed.
inline Instance make_random_relu(std::size_t n, const std::vector<std::size_t>& widths,
                                 std::uint64_t seed) {
  if (n == 0) throw InputError("random_relu: input dimension must be positive");
  RandomEngine eng(derive_seed(seed, "random-relu"));
  auto coin = [&eng]() { return Rational(uniform_int(eng, -1024, 1024), 1024); };
  std::vector<Layer> layers;
  std::size_t prev = n;
  for (std::size_t w : widths) {
    if (w == 0) throw InputError("random_relu: layer width must be positive");
    Layer l;
    l.activation = Activation::Relu;
    for (std::size_t r = 0; r < w; ++r) {
      RatVec row(prev);
      for (auto& c : row) c = coin();
      l.weights.push_back(std::move(row));
      l.bias.push_back(coin());
    }
    layers.push_back(std::move(l));
    prev = w;
  }
  Layer out;
  out.activation = Activation::Identity;
  RatVec row(prev);
  for (auto& c : row) c = coin();
  out.weights.push_back(std::move(row));
  out.bias.push_back(coin());
  layers.push_back(std::move(out));

  std::ostringstream name;
  name << "random-n" << n << "-w";
  for (std::size_t i = 0; i < widths.size(); ++i) name << (i ? "x" : "") << widths[i];
  name << "-s" << seed;
  return Instance{name.str(), PwlModel(n, std::move(layers)),
                  Box(RatVec(n, Rational(-1)), RatVec(n, Rational(1)))};
}

inline nlohmann::json instance_to_json(const Instance& inst) {
  nlohmann::json j = model_to_json(inst.model);
  j["name"] = inst.name;
  j["domain"] = box_to_json(inst.domain);
  return j;
}

// ---- grid oracle -------------------------------------------------------------------
//
// Brute force for the max-min objective: g(x) = min f over the guard region,
// both taken over a regular grid of the domain. Axis-aligned guard regions
// factor into per-axis windows, so g is a separable sliding-window minimum.

struct OracleResult {
  double value = 0;       // max over the grid of g
  RatVec argmax;          // exact grid coordinates of the maximizer
  double error_bound = 0; // Lipschitz bound times pitch
};

namespace detail_harness {

// Sliding minimum over index windows [wlo[k], whi[k]], both ends
// nondecreasing in k (guard windows around an increasing center are nested
// forward). Classic monotonic-deque scan, O(m).
inline void sliding_min(const std::vector<double>& buf, const std::vector<std::size_t>& wlo,
                        const std::vector<std::size_t>& whi, std::vector<double>& out) {
  std::size_t m = buf.size();
  std::deque<std::size_t> dq;
  std::size_t next = 0;
  for (std::size_t k = 0; k < m; ++k) {
    while (next <= whi[k]) {
      while (!dq.empty() && buf[dq.back()] >= buf[next]) dq.pop_back();
      dq.push_back(next);
      ++next;
    }
    while (dq.front() < wlo[k]) dq.pop_front();
    out[k] = buf[dq.front()];
  }
}

}  // namespace detail_harness

inline OracleResult grid_oracle(const PwlModel& model, const Guard& guard, const Box& domain,
                                const Rational& pitch) {
  std::size_t n = domain.dim();
  if (n != model.input_dim()) throw InputError("oracle: domain dimension mismatch");
  if (n > 3) throw InputError("oracle: dimension capped at 3");
  if (pitch <= 0) throw InputError("oracle: pitch must be positive");

  std::vector<std::size_t> m(n);
  std::size_t total = 1;
  for (std::size_t j = 0; j < n; ++j) {
    BigInt steps = rat_floor((domain.upper[j] - domain.lower[j]) / pitch);
    m[j] = static_cast<std::size_t>(steps) + 1;
    if (m[j] == 0 || total > 40'000'000 / m[j])
      throw InputError("oracle: grid too large; widen the pitch");
    total *= m[j];
  }

  std::vector<std::vector<double>> coord(n);
  for (std::size_t j = 0; j < n; ++j) {
    coord[j].resize(m[j]);
    for (std::size_t k = 0; k < m[j]; ++k)
      coord[j][k] = to_double(domain.lower[j] + Rational(k) * pitch);
  }

  std::vector<std::size_t> stride(n);
  stride[n - 1] = 1;
  for (std::size_t j = n - 1; j-- > 0;) stride[j] = stride[j + 1] * m[j + 1];

  std::vector<double> grid(total);
  {
    std::vector<std::size_t> idx(n, 0);
    std::vector<double> x(n);
    for (std::size_t flat = 0; flat < total; ++flat) {
      for (std::size_t j = 0; j < n; ++j) x[j] = coord[j][idx[j]];
      grid[flat] = model.evaluate_double(x);
      for (std::size_t j = n; j-- > 0;) {
        if (++idx[j] < m[j]) break;
        idx[j] = 0;
      }
    }
  }

  // Per-axis index windows of the guard region around each grid center.
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<std::size_t> wlo(m[a]), whi(m[a]);
    for (std::size_t k = 0; k < m[a]; ++k) {
      Rational center = domain.lower[a] + Rational(k) * pitch;
      Rational rlo, rhi;
      if (guard.kind == GuardKind::Abs) {
        rlo = center - guard.value;
        rhi = center + guard.value;
      } else {
        if (center < 0) throw InputError("oracle: RelBox guard needs a nonnegative domain");
        rlo = center - guard.value * center;
        rhi = center + guard.value * center;
      }
      BigInt ilo = rat_ceil((rlo - domain.lower[a]) / pitch);
      BigInt ihi = rat_floor((rhi - domain.lower[a]) / pitch);
      wlo[k] = ilo < 0 ? 0 : static_cast<std::size_t>(std::min<BigInt>(ilo, m[a] - 1));
      whi[k] = ihi < 0 ? 0 : static_cast<std::size_t>(std::min<BigInt>(ihi, m[a] - 1));
      if (whi[k] < wlo[k]) throw Error("oracle: empty guard window");
    }

    std::size_t lines = total / m[a];
    std::vector<double> buf(m[a]), out(m[a]);
    for (std::size_t line = 0; line < lines; ++line) {
      // Base offset of this line: expand `line` over the other axes.
      std::size_t rest = line, base = 0;
      for (std::size_t j = n; j-- > 0;) {
        if (j == a) continue;
        base += (rest % m[j]) * stride[j];
        rest /= m[j];
      }
      for (std::size_t k = 0; k < m[a]; ++k) buf[k] = grid[base + k * stride[a]];
      detail_harness::sliding_min(buf, wlo, whi, out);
      for (std::size_t k = 0; k < m[a]; ++k) grid[base + k * stride[a]] = out[k];
    }
  }

  std::size_t best = 0;
  for (std::size_t flat = 1; flat < total; ++flat)
    if (grid[flat] > grid[best]) best = flat;

  OracleResult res;
  res.value = grid[best];
  res.argmax.resize(n);
  std::size_t rest = best;
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t k = rest / stride[j];
    rest %= stride[j];
    res.argmax[j] = domain.lower[j] + Rational(k) * pitch;
  }
  res.error_bound = to_double(model.lipschitz_bound() * pitch);
  return res;
}

// ---- solve runs ---------------------------------------------------------------------

struct RunResult {
  std::string name;
  ThresholdResult result;
  Indicators indicators;
  bool verified = false;  // post-hoc re-verification of the final Lower verdict
};

namespace detail_harness {

inline Indicators collect_indicators(const PhaseStats& s, const ThresholdResult& r, double wall) {
  Indicators ind;
  ind.T = r.threshold;
  ind.timed_out = r.timed_out;
  ind.N_cap = s.cert_candidate_sat;
  ind.N_can = s.cert_candidate_unsat;
  ind.N_ce = s.cert_counter_sat;
  ind.N_sa = s.cert_counter_unsat;
  ind.T_cap = round_ms(s.cert_candidate_sat_s);
  ind.T_can = round_ms(s.cert_candidate_unsat_s);
  ind.T_ce = round_ms(s.cert_counter_sat_s);
  ind.T_sa = round_ms(s.cert_counter_unsat_s);
  ind.n_cai = s.bo_candidate_suggests;
  ind.n_cci = s.bo_counter_suggests;
  ind.n_cap = s.bo_candidate_found;
  ind.n_can = s.bo_candidate_missed;
  ind.n_ce = s.bo_counter_found;
  ind.n_sa = s.bo_counter_missed;
  ind.n_un = s.bo_faults;
  ind.t_cap = round_ms(s.bo_candidate_found_s);
  ind.t_can = round_ms(s.bo_candidate_missed_s);
  ind.t_ce = round_ms(s.bo_counter_found_s);
  ind.t_sa = round_ms(s.bo_counter_missed_s);
  ind.time = round_ms(wall);
  return ind;
}

}  // namespace detail_harness

inline RunResult run_solve(const ProblemSpec& spec) {
  auto t0 = std::chrono::steady_clock::now();
  SolverConfig cfg = spec.solver;
  if (spec.budget_s > 0)
    cfg.deadline = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(spec.budget_s));
  GearSolver solver(spec.model, spec.guard, spec.domain, cfg);
  ThresholdResult result = solver.optimize();
  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  RunResult run;
  run.name = spec.name;
  run.indicators = detail_harness::collect_indicators(solver.stats(), result, wall);
  if (result.witness && result.certified) {
    run.verified = reverify_lower(spec.model, spec.guard, spec.domain, *result.witness,
                                  result.threshold, cfg.certifier);
    if (!run.verified)
      throw Error("post-hoc re-verification failed: the Lower verdict at T=" +
                  result.threshold.str() + " did not hold up");
  }
  run.result = std::move(result);
  return run;
}

// ---- result serialization -----------------------------------------------------------

inline nlohmann::json indicators_to_json(const Indicators& ind) {
  nlohmann::json j;
  j["T"] = rational_to_json(ind.T);
  j["timed_out"] = ind.timed_out;
  j["N_cap"] = ind.N_cap;
  j["N_can"] = ind.N_can;
  j["N_ce"] = ind.N_ce;
  j["N_sa"] = ind.N_sa;
  j["T_cap"] = ind.T_cap;
  j["T_can"] = ind.T_can;
  j["T_ce"] = ind.T_ce;
  j["T_sa"] = ind.T_sa;
  j["n_cai"] = ind.n_cai;
  j["n_cci"] = ind.n_cci;
  j["n_cap"] = ind.n_cap;
  j["n_can"] = ind.n_can;
  j["n_ce"] = ind.n_ce;
  j["n_sa"] = ind.n_sa;
  j["n_un"] = ind.n_un;
  j["t_cap"] = ind.t_cap;
  j["t_can"] = ind.t_can;
  j["t_ce"] = ind.t_ce;
  j["t_sa"] = ind.t_sa;
  j["time"] = ind.time;
  return j;
}

inline nlohmann::json rat_vec_to_json(const RatVec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Rational& r : v) arr.push_back(rational_to_json(r));
  return arr;
}

inline RatVec rat_vec_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw InputError(where + ": expected an array");
  RatVec v;
  for (const auto& e : j) v.push_back(rational_from_json(e, where));
  return v;
}

inline nlohmann::json run_result_to_json(const RunResult& run) {
  nlohmann::json j;
  j["name"] = run.name;
  j["T"] = rational_to_json(run.result.threshold);
  j["T_double"] = to_double(run.result.threshold);
  j["epsilon"] = rational_to_json(run.result.epsilon);
  j["timed_out"] = run.result.timed_out;
  j["certified"] = run.result.certified;
  j["verified"] = run.verified;
  j["iterations"] = run.result.iterations;
  if (run.result.witness) {
    j["witness"] = {{"x", rat_vec_to_json(run.result.witness->x)},
                    {"y", rational_to_json(run.result.witness->y)}};
  } else {
    j["witness"] = nullptr;
  }
  nlohmann::json bracket = nlohmann::json::array();
  for (const BracketStep& b : run.result.bracket)
    bracket.push_back({{"T", rational_to_json(b.threshold)},
                       {"verdict", b.kind == VerdictKind::Lower ? "lower" : "upper"}});
  j["bracket"] = bracket;
  nlohmann::json pairs = nlohmann::json::array();
  for (const PairRecord& p : run.result.pairs) {
    pairs.push_back({{"candidate", rat_vec_to_json(p.candidate)},
                     {"counterexample", rat_vec_to_json(p.counterexample)},
                     {"f_candidate", rational_to_json(p.f_candidate)},
                     {"f_counterexample", rational_to_json(p.f_counterexample)},
                     {"threshold", rational_to_json(p.threshold)},
                     {"candidate_source", p.candidate_source == PointSource::Bo ? "bo" : "certifier"},
                     {"counterexample_source",
                      p.counterexample_source == PointSource::Bo ? "bo" : "certifier"}});
  }
  j["pairs"] = pairs;
  j["indicators"] = indicators_to_json(run.indicators);
  return j;
}

inline std::vector<PairRecord> pairs_from_json(const nlohmann::json& j) {
  std::vector<PairRecord> out;
  if (!j.contains("pairs")) return out;
  for (const auto& e : j.at("pairs")) {
    PairRecord p;
    p.candidate = rat_vec_from_json(e.at("candidate"), "pair candidate");
    p.counterexample = rat_vec_from_json(e.at("counterexample"), "pair counterexample");
    p.f_candidate = rational_from_json(e.at("f_candidate"), "pair f_candidate");
    p.f_counterexample = rational_from_json(e.at("f_counterexample"), "pair f_counterexample");
    p.threshold = rational_from_json(e.at("threshold"), "pair threshold");
    p.candidate_source =
        e.at("candidate_source") == "bo" ? PointSource::Bo : PointSource::Certifier;
    p.counterexample_source =
        e.at("counterexample_source") == "bo" ? PointSource::Bo : PointSource::Certifier;
    out.push_back(std::move(p));
  }
  return out;
}

// ---- scatter export -----------------------------------------------------------------

inline std::string scatter_csv(const std::vector<PairRecord>& pairs) {
  std::ostringstream os;
  os << "chebyshev,euclidean,gap,f_candidate,f_counterexample,threshold,"
        "candidate_source,counterexample_source\n";
  for (const PairRecord& p : pairs) {
    double cheb = to_double(chebyshev_distance(p.candidate, p.counterexample));
    double eucl = euclidean_distance_double(p.candidate, p.counterexample);
    double gap = to_double(rat_abs(p.f_candidate - p.f_counterexample));
    os << detail_harness::fmt_seconds(cheb) << ',' << detail_harness::fmt_seconds(eucl) << ','
       << detail_harness::fmt_seconds(gap) << ',' << to_double(p.f_candidate) << ','
       << to_double(p.f_counterexample) << ',' << to_double(p.threshold) << ','
       << (p.candidate_source == PointSource::Bo ? "bo" : "certifier") << ','
       << (p.counterexample_source == PointSource::Bo ? "bo" : "certifier") << '\n';
  }
  return os.str();
}

// ---- experiment matrix ---------------------------------------------------------------

// Runs the four BO on/off combinations for every instance, one worker per
// run, and emits rows keyed name:c:d sorted by key. Failures are recorded in
// the row's T cell and the matrix continues.
inline std::string run_matrix(const std::vector<ProblemSpec>& instances, std::size_t threads,
                              bool with_timings) {
  struct Job {
    const ProblemSpec* spec;
    bool c, d;
    std::string key;
  };
  std::vector<Job> jobs;
  for (const ProblemSpec& spec : instances)
    for (int c = 0; c < 2; ++c)
      for (int d = 0; d < 2; ++d)
        jobs.push_back(Job{&spec, c == 1, d == 1,
                           spec.name + ":" + std::to_string(c) + ":" + std::to_string(d)});

  std::vector<std::string> rows(jobs.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      ProblemSpec spec = *job.spec;
      spec.solver.use_bo_candidates = job.c;
      spec.solver.use_bo_counterexamples = job.d;
      try {
        RunResult run = run_solve(spec);
        if (!with_timings) zero_timers(run.indicators);
        rows[i] = indicators_csv_row(job.key, run.indicators);
      } catch (const Error& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), ',', ';');
        rows[i] = job.key + ",error(" + msg + "),0,0,0,0,0.000,0.000,0.000,0.000,"
                  "0,0,0,0,0,0,0,0.000,0.000,0.000,0.000,0.000";
      }
    }
  };

  if (threads == 0) threads = 1;
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::sort(rows.begin(), rows.end());
  std::ostringstream os;
  os << indicators_csv_header() << '\n';
  for (const std::string& row : rows) os << row << '\n';
  return os.str();
}

}  // namespace stabopt
