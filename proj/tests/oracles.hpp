#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. None of these call into the library under test.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rfs::oracle {

inline std::vector<std::string> words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Recursive interpreter over the SCAN-style grammar:
//   C := S | S and S | S after S
//   S := V | V twice | V thrice
//   V := U | U D | U opposite D | U around D | turn D | turn opposite D | turn around D
using Actions = std::vector<std::string>;

inline std::string scan_action(const std::string& w) {
  static const std::map<std::string, std::string> m = {
      {"walk", "Walk"}, {"look", "Look"}, {"run", "Run"},
      {"jump", "Jump"}, {"left", "Left"}, {"right", "Right"}};
  return m.at(w);
}

inline Actions scan_verb(std::span<const std::string> w) {
  const bool turn = w[0] == "turn";
  if (w.size() == 1) return {scan_action(w[0])};
  const std::string dir = scan_action(w.back());
  Actions unit;
  if (!turn) unit.push_back(scan_action(w[0]));
  if (w.size() == 2) {
    Actions out{dir};
    out.insert(out.end(), unit.begin(), unit.end());
    return out;
  }
  if (w[1] == "opposite") {
    Actions out{dir, dir};
    out.insert(out.end(), unit.begin(), unit.end());
    return out;
  }
  if (w[1] != "around") throw std::invalid_argument("scan: bad modifier " + w[1]);
  Actions out;
  for (int i = 0; i < 4; ++i) {
    out.push_back(dir);
    out.insert(out.end(), unit.begin(), unit.end());
  }
  return out;
}

inline Actions scan_statement(std::span<const std::string> w) {
  int reps = 1;
  if (w.back() == "twice") reps = 2;
  if (w.back() == "thrice") reps = 3;
  auto v = scan_verb(reps == 1 ? w : w.first(w.size() - 1));
  Actions out;
  for (int i = 0; i < reps; ++i) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline Actions scan_interpret(const std::vector<std::string>& w) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == "and" || w[i] == "after") {
      auto left = scan_statement(std::span(w).first(i));
      auto right = scan_statement(std::span(w).subspan(i + 1));
      if (w[i] == "after") std::swap(left, right);
      left.insert(left.end(), right.begin(), right.end());
      return left;
    }
  }
  return scan_statement(w);
}

// One-sample Kolmogorov-Smirnov statistic of `xs` against `cdf`.
template <typename F>
double ks_distance(std::vector<double> xs, F cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

inline double normal_cdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::numbers::sqrt2));
}

// Beta(1/2, 1/2).
inline double arcsine_cdf(double x) {
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  return 2.0 / std::numbers::pi * std::asin(std::sqrt(x));
}

// Asymptotic critical value of the KS statistic at significance 0.001.
inline double ks_critical(std::size_t n) { return 1.94947 / std::sqrt(static_cast<double>(n)); }

}  // namespace rfs::oracle
