#pragma once

#include <boost/multiprecision/gmp.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stabopt {

// All certified arithmetic runs on exact rationals; doubles appear only on
// the Bayesian-optimization fast path.
using Rational = boost::multiprecision::mpq_rational;
using BigInt = boost::multiprecision::mpz_int;
using RatVec = std::vector<Rational>;

// Error taxonomy. The CLI maps these onto its exit codes (input 2,
// timeout-with-partial-result 3, backend 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct TimeoutError : Error {
  using Error::Error;
};
struct BackendError : Error {
  using Error::Error;
};

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

inline std::vector<double> to_double(const RatVec& v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = to_double(v[i]);
  return out;
}

// Doubles are dyadic rationals, so this conversion is exact.
inline Rational rational_from_double(double x) {
  if (!std::isfinite(x)) throw InputError("cannot convert non-finite double to rational");
  return Rational(x);
}

inline std::string to_string(const Rational& r) { return r.str(); }

namespace detail {

inline BigInt pow10(std::size_t k) {
  BigInt b = 1;
  for (std::size_t i = 0; i < k; ++i) b *= 10;
  return b;
}

// Base-10 accumulation. The BigInt string constructor auto-detects octal
// from a leading zero, which would corrupt inputs like "025".
inline BigInt parse_integer(const std::string& s) {
  std::size_t i = 0;
  bool negative = false;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    negative = s[i] == '-';
    ++i;
  }
  if (i == s.size()) throw InputError("malformed integer '" + s + "'");
  BigInt v = 0;
  for (; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') throw InputError("malformed integer '" + s + "'");
    v = v * 10 + (s[i] - '0');
  }
  return negative ? BigInt(-v) : v;
}

}  // namespace detail

// Exact parse of "p/q", integer, or decimal text ("-1.25", "2.5e-3").
inline Rational parse_rational(const std::string& text) {
  std::size_t begin = text.find_first_not_of(" \t");
  std::size_t end = text.find_last_not_of(" \t");
  if (begin == std::string::npos) throw InputError("empty numeral");
  std::string s = text.substr(begin, end - begin + 1);

  std::size_t slash = s.find('/');
  if (slash != std::string::npos) {
    BigInt p, q;
    try {
      p = detail::parse_integer(s.substr(0, slash));
      q = detail::parse_integer(s.substr(slash + 1));
    } catch (const InputError&) {
      throw InputError("malformed fraction '" + s + "'");
    }
    if (q == 0) throw InputError("zero denominator in '" + s + "'");
    return Rational(p, q);
  }

  bool negative = false;
  std::size_t i = 0;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    negative = s[i] == '-';
    ++i;
  }
  std::string digits;
  std::size_t frac_len = 0;
  bool seen_digit = false, seen_dot = false;
  long exponent = 0;
  for (; i < s.size(); ++i) {
    char c = s[i];
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
      seen_digit = true;
      if (seen_dot) ++frac_len;
    } else if (c == '.' && !seen_dot) {
      seen_dot = true;
    } else if ((c == 'e' || c == 'E') && seen_digit) {
      try {
        exponent = std::stol(s.substr(i + 1));
      } catch (const std::exception&) {
        throw InputError("malformed exponent in '" + s + "'");
      }
      i = s.size() - 1;
      break;
    } else {
      throw InputError("malformed numeral '" + s + "'");
    }
  }
  if (!seen_digit) throw InputError("malformed numeral '" + s + "'");

  BigInt num = digits.empty() ? BigInt(0) : detail::parse_integer(digits);
  if (negative) num = -num;
  Rational r(num, detail::pow10(frac_len));
  if (exponent > 0)
    r *= Rational(detail::pow10(static_cast<std::size_t>(exponent)));
  else if (exponent < 0)
    r /= Rational(detail::pow10(static_cast<std::size_t>(-exponent)));
  return r;
}

inline Rational rat_abs(const Rational& r) { return r < 0 ? Rational(-r) : r; }

inline BigInt rat_floor(const Rational& r) {
  BigInt num = numerator(r), den = denominator(r);  // den > 0 in canonical form
  BigInt q = num / den;                             // truncates toward zero
  if (num % den != 0 && num < 0) --q;
  return q;
}

inline BigInt rat_ceil(const Rational& r) { return -rat_floor(-r); }

inline Rational chebyshev_distance(const RatVec& a, const RatVec& b) {
  if (a.size() != b.size()) throw InputError("chebyshev distance: dimension mismatch");
  Rational m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rat_abs(a[i] - b[i]));
  return m;
}

inline double euclidean_distance_double(const RatVec& a, const RatVec& b) {
  if (a.size() != b.size()) throw InputError("euclidean distance: dimension mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = to_double(a[i] - b[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace stabopt
