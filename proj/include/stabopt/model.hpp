#pragma once

#include <json.hpp>

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stabopt/rational.hpp"

namespace stabopt {

enum class Activation { Relu, Identity };

struct Layer {
  std::vector<RatVec> weights;  // one row per output unit
  RatVec bias;
  Activation activation = Activation::Identity;

  std::size_t rows() const { return weights.size(); }
  std::size_t cols() const { return weights.empty() ? 0 : weights.front().size(); }
};

// Axis-aligned box with exact rational bounds.
struct Box {
  RatVec lower, upper;

  Box() = default;
  Box(RatVec lo, RatVec hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw InputError("box bounds have mismatched dimensions");
    for (std::size_t i = 0; i < lower.size(); ++i)
      if (lower[i] > upper[i]) throw InputError("box has lower[" + std::to_string(i) + "] > upper");
  }

  std::size_t dim() const { return lower.size(); }

  bool contains(const RatVec& x) const {
    if (x.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i)
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
  }

  RatVec clamp(const RatVec& x) const {
    RatVec out = x;
    for (std::size_t i = 0; i < dim(); ++i) out[i] = std::min(std::max(out[i], lower[i]), upper[i]);
    return out;
  }

  RatVec midpoint() const {
    RatVec m(dim());
    for (std::size_t i = 0; i < dim(); ++i) m[i] = (lower[i] + upper[i]) / 2;
    return m;
  }

  // Empty means some interval vanished entirely, not a zero-width interval.
  static bool intersect(const Box& a, const Box& b, Box* out) {
    RatVec lo(a.dim()), hi(a.dim());
    for (std::size_t i = 0; i < a.dim(); ++i) {
      lo[i] = std::max(a.lower[i], b.lower[i]);
      hi[i] = std::min(a.upper[i], b.upper[i]);
      if (lo[i] > hi[i]) return false;
    }
    if (out) *out = Box(std::move(lo), std::move(hi));
    return true;
  }
};

class PwlModel {
 public:
  PwlModel(std::size_t input_dim, std::vector<Layer> layers)
      : input_dim_(input_dim), layers_(std::move(layers)) {
    if (input_dim_ == 0) throw InputError("model input dimension must be positive");
    if (layers_.empty()) throw InputError("model needs at least one layer");
    std::size_t width = input_dim_;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const Layer& l = layers_[k];
      if (l.rows() == 0) throw InputError("layer " + std::to_string(k) + " has no units");
      if (l.cols() != width)
        throw InputError("layer " + std::to_string(k) + " expects " + std::to_string(l.cols()) +
                         " inputs, previous width is " + std::to_string(width));
      for (std::size_t r = 0; r < l.rows(); ++r)
        if (l.weights[r].size() != l.cols())
          throw InputError("layer " + std::to_string(k) + " row " + std::to_string(r) +
                           " has inconsistent length");
      if (l.bias.size() != l.rows())
        throw InputError("layer " + std::to_string(k) + " bias length mismatch");
      width = l.rows();
    }
    if (width != 1) throw InputError("final layer must have exactly one output");

    weights_dbl_.resize(layers_.size());
    bias_dbl_.resize(layers_.size());
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      weights_dbl_[k].resize(layers_[k].rows());
      bias_dbl_[k].resize(layers_[k].rows());
      for (std::size_t r = 0; r < layers_[k].rows(); ++r) {
        bias_dbl_[k][r] = to_double(layers_[k].bias[r]);
        weights_dbl_[k][r].resize(layers_[k].cols());
        for (std::size_t c = 0; c < layers_[k].cols(); ++c)
          weights_dbl_[k][r][c] = to_double(layers_[k].weights[r][c]);
      }
    }
  }

  std::size_t input_dim() const { return input_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t relu_count() const {
    std::size_t n = 0;
    for (const Layer& l : layers_)
      if (l.activation == Activation::Relu) n += l.rows();
    return n;
  }

  Rational evaluate(const RatVec& x) const {
    if (x.size() != input_dim_) throw InputError("evaluate: expected " + std::to_string(input_dim_) +
                                                 " inputs, got " + std::to_string(x.size()));
    RatVec cur = x;
    for (const Layer& l : layers_) {
      RatVec next(l.rows());
      for (std::size_t r = 0; r < l.rows(); ++r) {
        Rational acc = l.bias[r];
        for (std::size_t c = 0; c < l.cols(); ++c) acc += l.weights[r][c] * cur[c];
        if (l.activation == Activation::Relu && acc < 0) acc = 0;
        next[r] = std::move(acc);
      }
      cur = std::move(next);
    }
    return cur.front();
  }

  // Fast path for the BO module; must track the exact path within 1e-9
  // relative error on sane inputs.
  double evaluate_double(const std::vector<double>& x) const {
    if (x.size() != input_dim_) throw InputError("evaluate_double: dimension mismatch");
    std::vector<double> cur = x;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      std::vector<double> next(weights_dbl_[k].size());
      for (std::size_t r = 0; r < next.size(); ++r) {
        double acc = bias_dbl_[k][r];
        for (std::size_t c = 0; c < weights_dbl_[k][r].size(); ++c)
          acc += weights_dbl_[k][r][c] * cur[c];
        if (layers_[k].activation == Activation::Relu && acc < 0) acc = 0;
        next[r] = acc;
      }
      cur = std::move(next);
    }
    return cur.front();
  }

  // Sound enclosure of f over the box by interval propagation.
  std::pair<Rational, Rational> interval_bound(const Box& domain) const {
    if (domain.dim() != input_dim_) throw InputError("interval_bound: domain dimension mismatch");
    RatVec lo = domain.lower, hi = domain.upper;
    for (const Layer& l : layers_) {
      RatVec nlo(l.rows()), nhi(l.rows());
      for (std::size_t r = 0; r < l.rows(); ++r) {
        Rational alo = l.bias[r], ahi = l.bias[r];
        for (std::size_t c = 0; c < l.cols(); ++c) {
          const Rational& w = l.weights[r][c];
          if (w >= 0) {
            alo += w * lo[c];
            ahi += w * hi[c];
          } else {
            alo += w * hi[c];
            ahi += w * lo[c];
          }
        }
        if (l.activation == Activation::Relu) {
          if (alo < 0) alo = 0;
          if (ahi < 0) ahi = 0;
        }
        nlo[r] = std::move(alo);
        nhi[r] = std::move(ahi);
      }
      lo = std::move(nlo);
      hi = std::move(nhi);
    }
    return {lo.front(), hi.front()};
  }

  // Product of max-row-sum norms; ReLU is 1-Lipschitz, so this bounds the
  // Chebyshev Lipschitz constant of f.
  Rational lipschitz_bound() const {
    Rational prod = 1;
    for (const Layer& l : layers_) {
      Rational maxrow = 0;
      for (std::size_t r = 0; r < l.rows(); ++r) {
        Rational s = 0;
        for (std::size_t c = 0; c < l.cols(); ++c) s += rat_abs(l.weights[r][c]);
        maxrow = std::max(maxrow, s);
      }
      prod *= maxrow;
    }
    return prod;
  }

 private:
  std::size_t input_dim_;
  std::vector<Layer> layers_;
  std::vector<std::vector<std::vector<double>>> weights_dbl_;
  std::vector<std::vector<double>> bias_dbl_;
};

// Affine expression over the variables of a ConstraintForm.
struct LinExpr {
  RatVec coef;  // indexed by variable id
  Rational cst;

  Rational eval(const RatVec& values) const {
    Rational acc = cst;
    for (std::size_t i = 0; i < coef.size(); ++i)
      if (coef[i] != 0) acc += coef[i] * values[i];
    return acc;
  }
};

// Equality-and-coupling view of a model: inputs x0..x{n-1}, one pre/post
// variable pair per ReLU unit, output variable y. Definitions are in
// topological order, so substituting x fixes every variable uniquely.
struct ConstraintForm {
  std::size_t num_vars = 0;
  std::vector<std::string> names;
  std::vector<std::size_t> input_vars;
  std::size_t output_var = 0;
  std::vector<std::pair<std::size_t, LinExpr>> definitions;     // var = expr
  std::vector<std::pair<std::size_t, std::size_t>> relu_pairs;  // (pre, post)

  std::size_t relu_count() const { return relu_pairs.size(); }
};

inline ConstraintForm to_constraints(const PwlModel& model) {
  ConstraintForm form;
  std::size_t n = model.input_dim();
  for (std::size_t i = 0; i < n; ++i) {
    form.input_vars.push_back(form.num_vars);
    form.names.push_back("x" + std::to_string(i));
    ++form.num_vars;
  }

  // Running affine expressions of the current layer outputs over the
  // variables allocated so far; identity layers compose without new vars.
  auto widen = [&form](LinExpr& e) { e.coef.resize(form.num_vars, Rational(0)); };
  std::vector<LinExpr> cur(n);
  for (std::size_t i = 0; i < n; ++i) {
    cur[i].coef.assign(form.num_vars, Rational(0));
    cur[i].coef[form.input_vars[i]] = 1;
    cur[i].cst = 0;
  }

  std::size_t unit = 0;
  for (const Layer& l : model.layers()) {
    std::vector<LinExpr> pre(l.rows());
    for (std::size_t r = 0; r < l.rows(); ++r) {
      LinExpr e;
      e.coef.assign(form.num_vars, Rational(0));
      e.cst = l.bias[r];
      for (std::size_t c = 0; c < l.cols(); ++c) {
        if (l.weights[r][c] == 0) continue;
        for (std::size_t v = 0; v < cur[c].coef.size(); ++v)
          if (cur[c].coef[v] != 0) e.coef[v] += l.weights[r][c] * cur[c].coef[v];
        e.cst += l.weights[r][c] * cur[c].cst;
      }
      pre[r] = std::move(e);
    }
    if (l.activation == Activation::Relu) {
      std::vector<LinExpr> post(l.rows());
      for (std::size_t r = 0; r < l.rows(); ++r) {
        std::size_t pre_var = form.num_vars++;
        form.names.push_back("pre" + std::to_string(unit));
        std::size_t post_var = form.num_vars++;
        form.names.push_back("post" + std::to_string(unit));
        ++unit;
        widen(pre[r]);
        form.definitions.emplace_back(pre_var, pre[r]);
        form.relu_pairs.emplace_back(pre_var, post_var);
        LinExpr p;
        p.coef.assign(form.num_vars, Rational(0));
        p.coef[post_var] = 1;
        p.cst = 0;
        post[r] = std::move(p);
      }
      cur = std::move(post);
      for (LinExpr& e : cur) widen(e);
    } else {
      cur = std::move(pre);
    }
  }

  form.output_var = form.num_vars++;
  form.names.push_back("y");
  widen(cur.front());
  form.definitions.emplace_back(form.output_var, cur.front());
  for (auto& [v, e] : form.definitions) {
    (void)v;
    widen(e);
  }
  return form;
}

// Forward-substitutes x through the definitions and couplings; returns the
// full variable assignment (used for witness validation and tests).
inline RatVec solve_constraints(const ConstraintForm& form, const RatVec& x) {
  if (x.size() != form.input_vars.size()) throw InputError("solve_constraints: dimension mismatch");
  RatVec values(form.num_vars, Rational(0));
  for (std::size_t i = 0; i < x.size(); ++i) values[form.input_vars[i]] = x[i];
  std::size_t next_pair = 0;
  for (const auto& [var, expr] : form.definitions) {
    values[var] = expr.eval(values);
    if (next_pair < form.relu_pairs.size() && form.relu_pairs[next_pair].first == var) {
      const auto& [pre_var, post_var] = form.relu_pairs[next_pair];
      values[post_var] = values[pre_var] < 0 ? Rational(0) : values[pre_var];
      ++next_pair;
    }
  }
  return values;
}

// ---- JSON (de)serialization -------------------------------------------------

inline Rational rational_from_json(const nlohmann::json& j, const std::string& where) {
  if (j.is_string()) {
    try {
      return parse_rational(j.get<std::string>());
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  if (j.is_number_integer()) return Rational(j.get<long long>());
  if (j.is_number_unsigned()) return Rational(j.get<unsigned long long>());
  if (j.is_number_float()) return rational_from_double(j.get<double>());
  throw InputError(where + ": expected a numeral, got " + std::string(j.type_name()));
}

inline nlohmann::json rational_to_json(const Rational& r) {
  if (denominator(r) == 1 && rat_abs(r) < Rational(1LL << 52)) {
    return nlohmann::json(numerator(r).convert_to<long long>());
  }
  return nlohmann::json(to_string(r));
}

inline PwlModel model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InputError("model: expected a JSON object");
  if (!j.contains("input_dim") || !j["input_dim"].is_number_integer())
    throw InputError("model: missing integer field 'input_dim'");
  if (!j.contains("layers") || !j["layers"].is_array())
    throw InputError("model: missing array field 'layers'");
  std::size_t input_dim = j["input_dim"].get<std::size_t>();
  std::vector<Layer> layers;
  std::size_t k = 0;
  for (const auto& lj : j["layers"]) {
    std::string where = "layer " + std::to_string(k);
    if (!lj.is_object()) throw InputError(where + ": expected an object");
    if (!lj.contains("weights") || !lj["weights"].is_array())
      throw InputError(where + ": missing array field 'weights'");
    if (!lj.contains("bias") || !lj["bias"].is_array())
      throw InputError(where + ": missing array field 'bias'");
    Layer l;
    std::size_t r = 0;
    for (const auto& row : lj["weights"]) {
      if (!row.is_array()) throw InputError(where + " row " + std::to_string(r) + ": expected an array");
      RatVec rv;
      for (const auto& cell : row)
        rv.push_back(rational_from_json(cell, where + " row " + std::to_string(r)));
      l.weights.push_back(std::move(rv));
      ++r;
    }
    for (const auto& cell : lj["bias"]) l.bias.push_back(rational_from_json(cell, where + " bias"));
    std::string act = lj.value("activation", std::string("identity"));
    if (act == "relu")
      l.activation = Activation::Relu;
    else if (act == "identity")
      l.activation = Activation::Identity;
    else
      throw InputError(where + ": unknown activation '" + act + "'");
    layers.push_back(std::move(l));
    ++k;
  }
  return PwlModel(input_dim, std::move(layers));
}

inline nlohmann::json model_to_json(const PwlModel& model) {
  nlohmann::json j;
  j["input_dim"] = model.input_dim();
  j["layers"] = nlohmann::json::array();
  for (const Layer& l : model.layers()) {
    nlohmann::json lj;
    lj["activation"] = l.activation == Activation::Relu ? "relu" : "identity";
    lj["weights"] = nlohmann::json::array();
    for (const RatVec& row : l.weights) {
      nlohmann::json rj = nlohmann::json::array();
      for (const Rational& w : row) rj.push_back(rational_to_json(w));
      lj["weights"].push_back(std::move(rj));
    }
    lj["bias"] = nlohmann::json::array();
    for (const Rational& b : l.bias) lj["bias"].push_back(rational_to_json(b));
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

inline PwlModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

inline PwlModel parse_model_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("model text: ") + e.what());
  }
  return model_from_json(j);
}

inline Box box_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("lower") || !j.contains("upper"))
    throw InputError(where + ": expected {\"lower\": [...], \"upper\": [...]}");
  RatVec lo, hi;
  for (const auto& v : j["lower"]) lo.push_back(rational_from_json(v, where + " lower"));
  for (const auto& v : j["upper"]) hi.push_back(rational_from_json(v, where + " upper"));
  return Box(std::move(lo), std::move(hi));
}

inline nlohmann::json box_to_json(const Box& b) {
  nlohmann::json j;
  j["lower"] = nlohmann::json::array();
  j["upper"] = nlohmann::json::array();
  for (const Rational& v : b.lower) j["lower"].push_back(rational_to_json(v));
  for (const Rational& v : b.upper) j["upper"].push_back(rational_to_json(v));
  return j;
}

}  // namespace stabopt
