#include <algorithm>
#include <cmath>

#include "anomagent/kernels.hpp"

namespace anomagent::kernels::scalar {

double sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

MeanStd mean_std(const double* x, std::size_t n) {
  if (n == 0) return {0.0, 0.0};
  const double mean = sum(x, n) / static_cast<double>(n);
  double ssd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    ssd += d * d;
  }
  return {mean, std::sqrt(ssd / static_cast<double>(n))};
}

void center_scale(double* out, const double* x, std::size_t n, double mean,
                  double inv_std) {
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv_std;
}

void diff(double* out, const double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

double masked_sum(const double* x, const std::uint8_t* mask, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * static_cast<double>(mask[i]);
  return acc;
}

std::size_t mask_count(const std::uint8_t* mask, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += mask[i] ? 1 : 0;
  return c;
}

double clipped_surrogate_sum(const double* ratios, const std::uint8_t* mask,
                             std::size_t n, double adv, double lo, double hi) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ratios[i];
    const double clipped = std::min(std::max(r, lo), hi);
    acc += std::min(r * adv, clipped * adv) * static_cast<double>(mask[i]);
  }
  return acc;
}

std::size_t masked_outside_count(const double* ratios, const std::uint8_t* mask,
                                 std::size_t n, double lo, double hi) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] && (ratios[i] < lo || ratios[i] > hi)) ++c;
  }
  return c;
}

double k3_sum(const double* expd, const double* d, const std::uint8_t* mask,
              std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += (expd[i] - d[i] - 1.0) * static_cast<double>(mask[i]);
  }
  return acc;
}

double max0_diff_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 1; i < n; ++i) acc += std::max(0.0, x[i] - x[i - 1]);
  return acc;
}

}  // namespace anomagent::kernels::scalar
