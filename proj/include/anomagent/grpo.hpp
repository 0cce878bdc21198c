#pragma once

#include <cstdint>
#include <vector>

#include "anomagent/config.hpp"

// Loss-side numerics for group-relative policy optimization over
// trajectory-level rewards, plus the supervised fine-tuning negative
// log-likelihood. Everything operates on caller-supplied per-token
// log-probabilities; parameter updates live in whatever training harness
// calls this.

namespace anomagent {

struct GroupRollout {
  std::vector<double> rewards;  // one scalar per trajectory
  // Per trajectory, per token, under the current / behavior / reference
  // policies. The three sequences of a trajectory must share one length.
  std::vector<std::vector<double>> token_logprobs_new;
  std::vector<std::vector<double>> token_logprobs_old;
  std::vector<std::vector<double>> token_logprobs_ref;
  // 1 for assistant-authored (supervised) tokens, 0 for context tokens.
  std::vector<std::vector<std::uint8_t>> supervision_mask;
};

// Group-normalized advantages: (r - mean) / population std. A group whose
// std falls below cfg.std_floor is degenerate and yields all zeros.
// Throws Error{GroupTooSmall} for fewer than two rewards.
std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     const GrpoConfig& cfg);

// Element-wise exp(new - old). Throws Error{ShapeMismatch}.
std::vector<double> importance_ratios(const std::vector<double>& logprobs_new,
                                      const std::vector<double>& logprobs_old);

struct GrpoResult {
  double loss = 0.0;
  bool empty_after_filter = false;  // every advantage was exactly zero
  double clip_fraction = 0.0;  // supervised tokens with ratio outside the band
  double mean_kl = 0.0;        // mean per-token divergence estimate
  std::vector<double> advantages;   // per input trajectory
  std::vector<std::size_t> kept;    // surviving trajectory indices
  std::size_t supervised_tokens = 0;
};

// Clipped-surrogate objective with per-token divergence regularization
// against the reference policy, negated and pooled (mean) over all surviving
// supervised tokens. The trajectory advantage broadcasts to each of its
// supervised tokens. With filtering enabled, zero-advantage trajectories are
// dropped; if none survive, the loss is a defined 0 with the flag set.
// Per-token divergence uses the nonnegative estimator
// exp(ref - new) - (ref - new) - 1, not an exact distribution divergence.
GrpoResult grpo_loss(const GroupRollout& group, const GrpoConfig& cfg);

struct SftLossResult {
  double loss = 0.0;             // negative sum of supervised log-probs
  std::size_t token_count = 0;   // supervised tokens, for mean reduction
};

SftLossResult sft_loss(const std::vector<double>& token_logprobs,
                       const std::vector<std::uint8_t>& supervision_mask);

}  // namespace anomagent
