// Runtime selection between the scalar and AVX2 kernel variants. Each entry
// point resolves its implementation once, on first call, from a CPUID check;
// the choice is cached in a function-local static so later calls are a single
// indirect jump.

#include <cmath>

#include "anomagent/kernels.hpp"

namespace anomagent::kernels {

namespace {

inline bool cpu_has_avx2() {
#if defined(ANOMAGENT_HAVE_AVX2)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

#if defined(ANOMAGENT_HAVE_AVX2)
#define ANOMAGENT_PICK(name) (cpu_has_avx2() ? &avx2::name : &scalar::name)
#else
#define ANOMAGENT_PICK(name) (&scalar::name)
#endif

}  // namespace

const char* active_isa() {
  static const char* const isa = cpu_has_avx2() ? "avx2" : "scalar";
  return isa;
}

double sum(const double* x, std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(sum);
  return fn(x, n);
}

MeanStd mean_std(const double* x, std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(mean_std);
  return fn(x, n);
}

void center_scale(double* out, const double* x, std::size_t n, double mean,
                  double inv_std) {
  static const auto fn = ANOMAGENT_PICK(center_scale);
  fn(out, x, n, mean, inv_std);
}

void diff(double* out, const double* a, const double* b, std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(diff);
  fn(out, a, b, n);
}

void exp_vec(double* out, const double* x, std::size_t n) {
  // Deliberately scalar: libm exp is the accuracy reference, and the callers'
  // cost lives in the surrounding folds, which are vectorized.
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(x[i]);
}

double masked_sum(const double* x, const std::uint8_t* mask, std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(masked_sum);
  return fn(x, mask, n);
}

std::size_t mask_count(const std::uint8_t* mask, std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(mask_count);
  return fn(mask, n);
}

double clipped_surrogate_sum(const double* ratios, const std::uint8_t* mask,
                             std::size_t n, double adv, double lo, double hi) {
  static const auto fn = ANOMAGENT_PICK(clipped_surrogate_sum);
  return fn(ratios, mask, n, adv, lo, hi);
}

std::size_t masked_outside_count(const double* ratios, const std::uint8_t* mask,
                                 std::size_t n, double lo, double hi) {
  static const auto fn = ANOMAGENT_PICK(masked_outside_count);
  return fn(ratios, mask, n, lo, hi);
}

double k3_sum(const double* expd, const double* d, const std::uint8_t* mask,
              std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(k3_sum);
  return fn(expd, d, mask, n);
}

double max0_diff_sum(const double* x, std::size_t n) {
  static const auto fn = ANOMAGENT_PICK(max0_diff_sum);
  return fn(x, n);
}

double row_kl(const double* p, const double* q, std::size_t n) {
  // Scalar only: dominated by libm log, and rows are short.
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) acc += p[i] * std::log(p[i] / q[i]);
  }
  return acc;
}

#undef ANOMAGENT_PICK

}  // namespace anomagent::kernels
