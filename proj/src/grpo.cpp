#include "anomagent/grpo.hpp"

#include <string>

#include "anomagent/error.hpp"
#include "anomagent/kernels.hpp"

namespace anomagent {

namespace {

void check_grpo_config(const GrpoConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) {
    throw Error(ErrorCode::ConfigError, "epsilon must be positive");
  }
  if (cfg.kl_beta < 0.0 || cfg.std_floor < 0.0) {
    throw Error(ErrorCode::ConfigError,
                "kl_beta and std_floor must be nonnegative");
  }
}

void check_shapes(const GroupRollout& g) {
  const std::size_t n = g.rewards.size();
  if (g.token_logprobs_new.size() != n || g.token_logprobs_old.size() != n ||
      g.token_logprobs_ref.size() != n || g.supervision_mask.size() != n) {
    throw Error(ErrorCode::ShapeMismatch,
                "per-trajectory lists must match the reward count");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t len = g.token_logprobs_new[i].size();
    if (g.token_logprobs_old[i].size() != len ||
        g.token_logprobs_ref[i].size() != len ||
        g.supervision_mask[i].size() != len) {
      throw Error(ErrorCode::ShapeMismatch,
                  "trajectory " + std::to_string(i) +
                      " has inconsistent token sequence lengths");
    }
  }
}

}  // namespace

std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     const GrpoConfig& cfg) {
  check_grpo_config(cfg);
  if (rewards.size() < 2) {
    throw Error(ErrorCode::GroupTooSmall,
                "advantage normalization needs at least 2 rewards, got " +
                    std::to_string(rewards.size()));
  }
  const kernels::MeanStd ms = kernels::mean_std(rewards.data(), rewards.size());
  std::vector<double> advantages(rewards.size(), 0.0);
  if (ms.std < cfg.std_floor) return advantages;  // degenerate group
  kernels::center_scale(advantages.data(), rewards.data(), rewards.size(),
                        ms.mean, 1.0 / ms.std);
  return advantages;
}

std::vector<double> importance_ratios(const std::vector<double>& logprobs_new,
                                      const std::vector<double>& logprobs_old) {
  if (logprobs_new.size() != logprobs_old.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "log-probability sequences differ in length");
  }
  std::vector<double> out(logprobs_new.size());
  kernels::diff(out.data(), logprobs_new.data(), logprobs_old.data(), out.size());
  kernels::exp_vec(out.data(), out.data(), out.size());
  return out;
}

GrpoResult grpo_loss(const GroupRollout& group, const GrpoConfig& cfg) {
  check_grpo_config(cfg);
  check_shapes(group);

  GrpoResult result;
  result.advantages = group_advantages(group.rewards, cfg);

  for (std::size_t i = 0; i < result.advantages.size(); ++i) {
    if (cfg.filter_zero_advantage && result.advantages[i] == 0.0) continue;
    result.kept.push_back(i);
  }
  if (result.kept.empty()) {
    result.empty_after_filter = true;
    return result;
  }

  const double lo = 1.0 - cfg.epsilon;
  const double hi = 1.0 + cfg.epsilon;
  double surrogate_sum = 0.0;
  double kl_sum = 0.0;
  std::size_t clipped = 0;
  std::size_t tokens = 0;
  std::vector<double> ratios;
  std::vector<double> d;
  std::vector<double> expd;
  for (const std::size_t i : result.kept) {
    const auto& lp_new = group.token_logprobs_new[i];
    const auto& lp_old = group.token_logprobs_old[i];
    const auto& lp_ref = group.token_logprobs_ref[i];
    const auto& mask = group.supervision_mask[i];
    const std::size_t len = lp_new.size();
    ratios.resize(len);
    d.resize(len);
    expd.resize(len);
    kernels::diff(ratios.data(), lp_new.data(), lp_old.data(), len);
    kernels::exp_vec(ratios.data(), ratios.data(), len);
    surrogate_sum += kernels::clipped_surrogate_sum(
        ratios.data(), mask.data(), len, result.advantages[i], lo, hi);
    clipped += kernels::masked_outside_count(ratios.data(), mask.data(), len,
                                             lo, hi);
    kernels::diff(d.data(), lp_ref.data(), lp_new.data(), len);
    kernels::exp_vec(expd.data(), d.data(), len);
    kl_sum += kernels::k3_sum(expd.data(), d.data(), mask.data(), len);
    tokens += kernels::mask_count(mask.data(), len);
  }

  result.supervised_tokens = tokens;
  if (tokens == 0) return result;  // nothing supervised: defined zero loss
  const double count = static_cast<double>(tokens);
  result.loss = -(surrogate_sum - cfg.kl_beta * kl_sum) / count;
  result.clip_fraction = static_cast<double>(clipped) / count;
  result.mean_kl = kl_sum / count;
  return result;
}

SftLossResult sft_loss(const std::vector<double>& token_logprobs,
                       const std::vector<std::uint8_t>& supervision_mask) {
  if (token_logprobs.size() != supervision_mask.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "log-probabilities and supervision mask differ in length");
  }
  SftLossResult r;
  r.loss = -kernels::masked_sum(token_logprobs.data(), supervision_mask.data(),
                                token_logprobs.size());
  r.token_count =
      kernels::mask_count(supervision_mask.data(), supervision_mask.size());
  return r;
}

}  // namespace anomagent
