#pragma once

#include <cstddef>
#include <cstdint>

// Data-parallel inner loops shared by the loss and metric code. Every kernel
// has a scalar reference implementation; on x86-64 hosts with AVX2 a vector
// variant is selected at runtime. The two variants are equivalence-tested
// against each other; vector folds may reassociate additions, so agreement is
// to rounding, not bit-exact.
//
// Masks are 0/1 bytes. Masked kernels treat mask[i] as a multiplier, so
// masked-out lanes contribute exactly zero.

namespace anomagent::kernels {

struct MeanStd {
  double mean;
  double std;  // population standard deviation
};

double sum(const double* x, std::size_t n);
MeanStd mean_std(const double* x, std::size_t n);

// out[i] = (x[i] - mean) * inv_std
void center_scale(double* out, const double* x, std::size_t n, double mean,
                  double inv_std);

// out[i] = a[i] - b[i]
void diff(double* out, const double* a, const double* b, std::size_t n);

// out[i] = exp(x[i]); scalar libm only, no vector variant.
void exp_vec(double* out, const double* x, std::size_t n);

double masked_sum(const double* x, const std::uint8_t* mask, std::size_t n);
std::size_t mask_count(const std::uint8_t* mask, std::size_t n);

// sum over masked lanes of min(r*adv, clamp(r, lo, hi)*adv)
double clipped_surrogate_sum(const double* ratios, const std::uint8_t* mask,
                             std::size_t n, double adv, double lo, double hi);

// count of masked lanes with ratios[i] outside [lo, hi]
std::size_t masked_outside_count(const double* ratios, const std::uint8_t* mask,
                                 std::size_t n, double lo, double hi);

// sum over masked lanes of (expd[i] - d[i] - 1), the nonnegative per-token
// divergence estimator with expd = exp(d)
double k3_sum(const double* expd, const double* d, const std::uint8_t* mask,
              std::size_t n);

// sum over i of max(0, x[i] - x[i-1]); 0 for n < 2
double max0_diff_sum(const double* x, std::size_t n);

// sum over i of p[i]*log(p[i]/q[i]) with 0*log(0/q) == 0; scalar libm only.
double row_kl(const double* p, const double* q, std::size_t n);

// "avx2" or "scalar" depending on what the dispatcher picked.
const char* active_isa();

namespace scalar {
double sum(const double* x, std::size_t n);
MeanStd mean_std(const double* x, std::size_t n);
void center_scale(double* out, const double* x, std::size_t n, double mean,
                  double inv_std);
void diff(double* out, const double* a, const double* b, std::size_t n);
double masked_sum(const double* x, const std::uint8_t* mask, std::size_t n);
std::size_t mask_count(const std::uint8_t* mask, std::size_t n);
double clipped_surrogate_sum(const double* ratios, const std::uint8_t* mask,
                             std::size_t n, double adv, double lo, double hi);
std::size_t masked_outside_count(const double* ratios, const std::uint8_t* mask,
                                 std::size_t n, double lo, double hi);
double k3_sum(const double* expd, const double* d, const std::uint8_t* mask,
              std::size_t n);
double max0_diff_sum(const double* x, std::size_t n);
}  // namespace scalar

#if defined(ANOMAGENT_HAVE_AVX2)
namespace avx2 {
double sum(const double* x, std::size_t n);
MeanStd mean_std(const double* x, std::size_t n);
void center_scale(double* out, const double* x, std::size_t n, double mean,
                  double inv_std);
void diff(double* out, const double* a, const double* b, std::size_t n);
double masked_sum(const double* x, const std::uint8_t* mask, std::size_t n);
std::size_t mask_count(const std::uint8_t* mask, std::size_t n);
double clipped_surrogate_sum(const double* ratios, const std::uint8_t* mask,
                             std::size_t n, double adv, double lo, double hi);
std::size_t masked_outside_count(const double* ratios, const std::uint8_t* mask,
                                 std::size_t n, double lo, double hi);
double k3_sum(const double* expd, const double* d, const std::uint8_t* mask,
              std::size_t n);
double max0_diff_sum(const double* x, std::size_t n);
}  // namespace avx2
#endif

}  // namespace anomagent::kernels
