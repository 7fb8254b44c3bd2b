#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ziqe/common.hpp"
#include "ziqe/rng.hpp"

namespace testing {

/// Box-Muller standard normal (test oracle only).
inline double normal(ziqe::SplitMix64& rng) {
  double u1 = rng.uniform();
  while (u1 <= 0.0) u1 = rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Marsaglia-Tsang gamma(shape, 1) sampler.
inline double gamma_draw(double shape, ziqe::SplitMix64& rng) {
  if (shape < 1.0) {
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    return gamma_draw(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

inline std::vector<double> beta_draws(double a, double b, std::size_t n, std::uint64_t seed) {
  ziqe::SplitMix64 rng(seed);
  std::vector<double> out;
  out.reserve(n);
  while (out.size() < n) {
    const double x = gamma_draw(a, rng);
    const double y = gamma_draw(b, rng);
    const double v = x / (x + y);
    if (v > 0.0 && v < 1.0) out.push_back(v);
  }
  return out;
}

/// Minimal edit distance by exhaustive recursion over the three edit
/// operations (memoized on suffix pairs).
inline std::size_t brute_force_edit_distance(std::span<const ziqe::TokenId> a,
                                             std::span<const ziqe::TokenId> b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    std::size_t best = go(i + 1, j + 1) + (a[i] == b[j] ? 0 : 1);
    best = std::min(best, go(i + 1, j) + 1);
    best = std::min(best, go(i, j + 1) + 1);
    memo[key] = best;
    return best;
  };
  return go(0, 0);
}

/// Every sequence over {0..alphabet-1} with length in [min_len, max_len].
inline std::vector<std::vector<ziqe::TokenId>> all_sequences(int alphabet, std::size_t min_len,
                                                             std::size_t max_len) {
  std::vector<std::vector<ziqe::TokenId>> out;
  std::vector<ziqe::TokenId> cur;
  std::function<void()> rec = [&] {
    if (cur.size() >= min_len) out.push_back(cur);
    if (cur.size() == max_len) return;
    for (int s = 0; s < alphabet; ++s) {
      cur.push_back(s);
      rec();
      cur.pop_back();
    }
  };
  rec();
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ziqe_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Composite Simpson integration of f over [lo, hi] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double lo, double hi,
                      std::size_t n) {
  const double h = (hi - lo) / static_cast<double>(n);
  double s = f(lo) + f(hi);
  for (std::size_t i = 1; i < n; ++i) s += f(lo + h * static_cast<double>(i)) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace testing
