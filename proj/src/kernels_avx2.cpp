// AVX2 variants of the inner-loop kernels. This translation unit is only
// compiled when the toolchain targets x86-64 and accepts -mavx2; whether it
// actually runs is decided per-process by the dispatcher after a CPUID check.

#include "anomagent/kernels.hpp"

#if defined(ANOMAGENT_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace anomagent::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// four 0/1 mask bytes widened to 0.0/1.0 doubles
inline __m256d load_mask4(const std::uint8_t* m) {
  std::uint32_t word;
  std::memcpy(&word, m, 4);
  const __m128i bytes = _mm_cvtsi32_si128(static_cast<int>(word));
  return _mm256_cvtepi32_pd(_mm_cvtepu8_epi32(bytes));
}

}  // namespace

double sum(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double total = hsum(acc);
  for (; i < n; ++i) total += x[i];
  return total;
}

MeanStd mean_std(const double* x, std::size_t n) {
  if (n == 0) return {0.0, 0.0};
  const double mean = sum(x, n) / static_cast<double>(n);
  const __m256d vmean = _mm256_set1_pd(mean);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vmean);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
  }
  double ssd = hsum(acc);
  for (; i < n; ++i) {
    const double d = x[i] - mean;
    ssd += d * d;
  }
  return {mean, std::sqrt(ssd / static_cast<double>(n))};
}

void center_scale(double* out, const double* x, std::size_t n, double mean,
                  double inv_std) {
  const __m256d vmean = _mm256_set1_pd(mean);
  const __m256d vscale = _mm256_set1_pd(inv_std);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d centered = _mm256_sub_pd(_mm256_loadu_pd(x + i), vmean);
    _mm256_storeu_pd(out + i, _mm256_mul_pd(centered, vscale));
  }
  for (; i < n; ++i) out[i] = (x[i] - mean) * inv_std;
}

void diff(double* out, const double* a, const double* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(
        out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

double masked_sum(const double* x, const std::uint8_t* mask, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(
        acc, _mm256_mul_pd(_mm256_loadu_pd(x + i), load_mask4(mask + i)));
  }
  double total = hsum(acc);
  for (; i < n; ++i) total += x[i] * static_cast<double>(mask[i]);
  return total;
}

std::size_t mask_count(const std::uint8_t* mask, std::size_t n) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += mask[i] ? 1 : 0;
  return c;
}

double clipped_surrogate_sum(const double* ratios, const std::uint8_t* mask,
                             std::size_t n, double adv, double lo, double hi) {
  const __m256d vadv = _mm256_set1_pd(adv);
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_loadu_pd(ratios + i);
    const __m256d clipped = _mm256_min_pd(_mm256_max_pd(r, vlo), vhi);
    const __m256d surrogate = _mm256_min_pd(_mm256_mul_pd(r, vadv),
                                            _mm256_mul_pd(clipped, vadv));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(surrogate, load_mask4(mask + i)));
  }
  double total = hsum(acc);
  for (; i < n; ++i) {
    const double r = ratios[i];
    const double clipped = std::min(std::max(r, lo), hi);
    total += std::min(r * adv, clipped * adv) * static_cast<double>(mask[i]);
  }
  return total;
}

std::size_t masked_outside_count(const double* ratios, const std::uint8_t* mask,
                                 std::size_t n, double lo, double hi) {
  const __m256d vlo = _mm256_set1_pd(lo);
  const __m256d vhi = _mm256_set1_pd(hi);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t c = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_loadu_pd(ratios + i);
    const __m256d outside = _mm256_or_pd(_mm256_cmp_pd(r, vlo, _CMP_LT_OQ),
                                         _mm256_cmp_pd(r, vhi, _CMP_GT_OQ));
    const __m256d live = _mm256_cmp_pd(load_mask4(mask + i), zero, _CMP_NEQ_OQ);
    const int bits = _mm256_movemask_pd(_mm256_and_pd(outside, live));
    c += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(bits)));
  }
  for (; i < n; ++i) {
    if (mask[i] && (ratios[i] < lo || ratios[i] > hi)) ++c;
  }
  return c;
}

double k3_sum(const double* expd, const double* d, const std::uint8_t* mask,
              std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d term = _mm256_sub_pd(
        _mm256_sub_pd(_mm256_loadu_pd(expd + i), _mm256_loadu_pd(d + i)), one);
    acc = _mm256_add_pd(acc, _mm256_mul_pd(term, load_mask4(mask + i)));
  }
  double total = hsum(acc);
  for (; i < n; ++i) {
    total += (expd[i] - d[i] - 1.0) * static_cast<double>(mask[i]);
  }
  return total;
}

double max0_diff_sum(const double* x, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 1;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i),
                                    _mm256_loadu_pd(x + i - 1));
    acc = _mm256_add_pd(acc, _mm256_max_pd(zero, d));
  }
  double total = hsum(acc);
  for (; i < n; ++i) total += std::max(0.0, x[i] - x[i - 1]);
  return total;
}

}  // namespace anomagent::kernels::avx2

#endif  // ANOMAGENT_HAVE_AVX2
