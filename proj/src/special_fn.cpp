#include "ziqe/special_fn.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ziqe::special {
namespace {

constexpr double kEulerGamma = 0.57721566490153286061;
constexpr double kHalfLog2Pi = 0.91893853320467274178;

// zeta(k) - 1 for k = 2..41.
constexpr std::array<double, 40> kZetaMinusOne = {
    0.64493406684822643647,     0.2020569031595942854,
    0.082323233711138191516,    0.036927755143369926331,
    0.017343061984449139715,    0.0083492773819228268398,
    0.0040773561979443393787,   0.0020083928260822144179,
    0.00099457512781808533715,  0.0004941886041194645587,
    0.00024608655330804829864,  0.00012271334757848914675,
    0.000061248135058704829259, 0.000030588236307020493552,
    0.000015282259408651871733, 7.6371976378997622736e-6,
    3.8172932649998398565e-6,   1.9082127165539389257e-6,
    9.5396203387279611315e-7,   4.7693298678780646312e-7,
    2.3845050272773299e-7,      1.1921992596531107307e-7,
    5.9608189051259479612e-8,   2.9803503514652280186e-8,
    1.4901554828365041235e-8,   7.450711789835429492e-9,
    3.7253340247884570548e-9,   1.8626597235130490064e-9,
    9.3132743241966818287e-10,  4.656629065033784073e-10,
    2.328311833676505492e-10,   1.1641550172700519776e-10,
    5.8207720879027008892e-11,  2.9103850444970996869e-11,
    1.4551921891041984236e-11,  7.2759598350574810145e-12,
    3.6379795473786511902e-12,  1.8189896503070659476e-12,
    9.0949478402638892825e-13,  4.5474737830421540268e-13,
};

// Bernoulli numbers B_2 .. B_16.
constexpr std::array<double, 8> kBernoulli = {
    1.0 / 6.0,    -1.0 / 30.0,     1.0 / 42.0,   -1.0 / 30.0,
    5.0 / 66.0,   -691.0 / 2730.0, 7.0 / 6.0,    -3617.0 / 510.0,
};

constexpr double kAsymptoticThreshold = 10.0;

void require_domain(double x, const char* fn) {
  if (!std::isfinite(x) || x <= 0.0) {
    throw std::domain_error(std::string(fn) + ": argument must be finite and > 0, got " +
                            std::to_string(x));
  }
}

// sum_{k>=2} (-1)^k (zeta(k) - 1) z^k / k, |z| <= 0.5.
double zeta_tail_series(double z) {
  double sum = 0.0;
  double zk = z;
  for (std::size_t i = 0; i < kZetaMinusOne.size(); ++i) {
    zk *= z;
    const double k = static_cast<double>(i + 2);
    const double term = kZetaMinusOne[i] * zk / k;
    sum += (i % 2 == 0) ? term : -term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return sum;
}

// log Gamma(2 + z) = (1 - gamma) z + sum_{k>=2} (-1)^k (zeta(k)-1) z^k / k.
double ln_gamma_two_plus(double z) { return (1.0 - kEulerGamma) * z + zeta_tail_series(z); }

double stirling(double x) {
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = 0.0;
  double pow = inv;
  for (std::size_t k = 1; k <= kBernoulli.size(); ++k) {
    const double two_k = 2.0 * static_cast<double>(k);
    series += kBernoulli[k - 1] / (two_k * (two_k - 1.0)) * pow;
    pow *= inv2;
  }
  return (x - 0.5) * std::log(x) - x + kHalfLog2Pi + series;
}

}  // namespace

double ln_gamma(double x) {
  require_domain(x, "ln_gamma");
  if (x < 0.5) {
    // Gamma(x) = Gamma(x + 1) / x with x + 1 in [1, 1.5).
    const double z = x;
    return -std::log1p(z) + ln_gamma_two_plus(z) - std::log(x);
  }
  if (x < 1.5) {
    const double z = x - 1.0;
    return -std::log1p(z) + ln_gamma_two_plus(z);
  }
  if (x <= 2.5) return ln_gamma_two_plus(x - 2.0);
  if (x >= kAsymptoticThreshold) return stirling(x);
  double shifted = x;
  double product = 1.0;
  while (shifted < kAsymptoticThreshold) {
    product *= shifted;
    shifted += 1.0;
  }
  return stirling(shifted) - std::log(product);
}

double digamma(double x) {
  require_domain(x, "digamma");
  double shift = 0.0;
  while (x < kAsymptoticThreshold) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double series = 0.0;
  double pow = inv2;
  for (std::size_t k = 1; k <= kBernoulli.size(); ++k) {
    series += kBernoulli[k - 1] / (2.0 * static_cast<double>(k)) * pow;
    pow *= inv2;
  }
  return shift + std::log(x) - 0.5 * inv - series;
}

}  // namespace ziqe::special
