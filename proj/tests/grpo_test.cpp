#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "anomagent/error.hpp"
#include "anomagent/grpo.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace anomagent;
using testutil::Rng;

namespace {

std::vector<double> random_rewards(Rng& rng, int g) {
  std::vector<double> r(static_cast<std::size_t>(g));
  for (double& x : r) x = rng.uniform(-2.0, 2.0);
  return r;
}

GroupRollout random_group(Rng& rng, int g, int max_tokens,
                          bool allow_degenerate = false) {
  GroupRollout out;
  out.rewards = random_rewards(rng, g);
  if (allow_degenerate && rng.chance(0.15)) {
    std::fill(out.rewards.begin(), out.rewards.end(), out.rewards.front());
  }
  for (int i = 0; i < g; ++i) {
    const int len = rng.range(0, max_tokens);
    std::vector<double> lp_new(static_cast<std::size_t>(len));
    std::vector<double> lp_old(static_cast<std::size_t>(len));
    std::vector<double> lp_ref(static_cast<std::size_t>(len));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
      lp_new[static_cast<std::size_t>(t)] = rng.uniform(-5.0, 0.0);
      lp_old[static_cast<std::size_t>(t)] = rng.uniform(-5.0, 0.0);
      lp_ref[static_cast<std::size_t>(t)] = rng.uniform(-5.0, 0.0);
      mask[static_cast<std::size_t>(t)] = rng.chance(0.75) ? 1 : 0;
    }
    out.token_logprobs_new.push_back(std::move(lp_new));
    out.token_logprobs_old.push_back(std::move(lp_old));
    out.token_logprobs_ref.push_back(std::move(lp_ref));
    out.supervision_mask.push_back(std::move(mask));
  }
  return out;
}

}  // namespace

TEST_CASE("group advantages match the brute-force oracle at scale") {
  Rng rng(0x9f01);
  const GrpoConfig cfg;
  for (int trial = 0; trial < 10000; ++trial) {
    const int g = rng.range(2, 16);
    const auto rewards = random_rewards(rng, g);
    const auto got = group_advantages(rewards, cfg);
    const auto want = oracles::advantages(rewards, cfg.std_floor);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::fabs(got[i] - want[i]) <= 1e-12);
    }
  }
}

TEST_CASE("advantages are shift invariant, scale equivariant, and zero-sum") {
  Rng rng(0x9f02);
  const GrpoConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    const int g = rng.range(2, 12);
    auto rewards = random_rewards(rng, g);
    const auto base = group_advantages(rewards, cfg);

    const double zero_sum = std::accumulate(base.begin(), base.end(), 0.0);
    CHECK(std::fabs(zero_sum) <= 1e-9);

    // Adding a constant to every reward changes nothing.
    const double shift = rng.uniform(-10.0, 10.0);
    auto shifted = rewards;
    for (double& r : shifted) r += shift;
    const auto after_shift = group_advantages(shifted, cfg);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(std::fabs(after_shift[i] - base[i]) <= 1e-8);
    }

    // Positive rescaling changes nothing either (std rescales along).
    const double scale = rng.uniform(0.5, 4.0);
    auto scaled = rewards;
    for (double& r : scaled) r *= scale;
    const auto after_scale = group_advantages(scaled, cfg);
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(std::fabs(after_scale[i] - base[i]) <= 1e-8);
    }
  }
}

TEST_CASE("degenerate groups normalize to all zeros") {
  const GrpoConfig cfg;
  const auto adv = group_advantages({1.5, 1.5, 1.5, 1.5}, cfg);
  for (double a : adv) CHECK(a == 0.0);
  // Spread below the floor counts as degenerate too.
  GrpoConfig wide = cfg;
  wide.std_floor = 1.0;
  const auto tiny = group_advantages({1.0, 1.1, 0.9}, wide);
  for (double a : tiny) CHECK(a == 0.0);
}

TEST_CASE("advantage preconditions") {
  const GrpoConfig cfg;
  CHECK_THROWS_AS(group_advantages({}, cfg), Error);
  try {
    group_advantages({1.0}, cfg);
    FAIL("expected GroupTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GroupTooSmall);
  }
  GrpoConfig bad = cfg;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(group_advantages({1.0, 2.0}, bad), Error);
  bad = cfg;
  bad.kl_beta = -0.1;
  CHECK_THROWS_AS(group_advantages({1.0, 2.0}, bad), Error);
}

TEST_CASE("importance ratios exponentiate the log difference") {
  const auto r = importance_ratios({-1.0, -2.0, -0.5}, {-1.5, -2.0, -1.0});
  CHECK(r[0] == std::exp(0.5));
  CHECK(r[1] == std::exp(0.0));
  CHECK(r[2] == std::exp(0.5));
  CHECK_THROWS_AS(importance_ratios({1.0}, {1.0, 2.0}), Error);
}

TEST_CASE("grpo loss matches the explicit-branch oracle on small cases") {
  Rng rng(0x9f03);
  for (int trial = 0; trial < 4000; ++trial) {
    GrpoConfig cfg;
    cfg.epsilon = rng.pick<double>({0.1, 0.2, 0.5});
    cfg.kl_beta = rng.pick<double>({0.0, 0.04, 0.3});
    cfg.filter_zero_advantage = rng.chance(0.5);
    const GroupRollout g = random_group(rng, 4, 8, /*allow_degenerate=*/true);
    const GrpoResult got = grpo_loss(g, cfg);
    const oracles::GrpoParts want = oracles::grpo(g, cfg);

    CHECK(got.empty_after_filter == want.empty_after_filter);
    CHECK(got.kept == want.kept);
    CHECK(got.supervised_tokens == want.tokens);
    CHECK(std::fabs(got.loss - want.loss) <= 1e-10);
    CHECK(std::fabs(got.clip_fraction - want.clip_fraction) <= 1e-12);
    CHECK(std::fabs(got.mean_kl - want.mean_kl) <= 1e-10);
    REQUIRE(got.advantages.size() == want.advantages.size());
    for (std::size_t i = 0; i < got.advantages.size(); ++i) {
      CHECK(std::fabs(got.advantages[i] - want.advantages[i]) <= 1e-12);
    }
  }
}

TEST_CASE("ratios far outside the band are clipped and counted") {
  GroupRollout g;
  g.rewards = {1.0, -1.0};
  // One token each; the first trajectory's ratio is exp(2), far above 1+eps.
  g.token_logprobs_new = {{-1.0}, {-3.0}};
  g.token_logprobs_old = {{-3.0}, {-3.0}};
  g.token_logprobs_ref = {{-1.0}, {-3.0}};
  g.supervision_mask = {{1}, {1}};

  GrpoConfig cfg;
  cfg.kl_beta = 0.0;
  const GrpoResult r = grpo_loss(g, cfg);
  // Advantages are +1 and -1 (mean 0, std 1). Clipped surrogate:
  // min(e^2*1, 1.2*1) = 1.2 and min(1*-1, 1*-1) = -1.
  CHECK(r.advantages[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.advantages[1] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(-(1.2 - 1.0) / 2.0).epsilon(1e-10));
  CHECK(r.clip_fraction == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.supervised_tokens == 2);
}

TEST_CASE("an infinite clip band reduces to the plain ratio objective") {
  Rng rng(0x9f04);
  GrpoConfig cfg;
  cfg.epsilon = std::numeric_limits<double>::infinity();
  cfg.kl_beta = 0.0;
  cfg.filter_zero_advantage = false;
  for (int trial = 0; trial < 200; ++trial) {
    const GroupRollout g = random_group(rng, 4, 6);
    const GrpoResult r = grpo_loss(g, cfg);
    CHECK(r.clip_fraction == 0.0);

    // Hand-computed unclipped objective.
    const auto adv = group_advantages(g.rewards, cfg);
    double surrogate = 0.0;
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < g.rewards.size(); ++i) {
      for (std::size_t t = 0; t < g.token_logprobs_new[i].size(); ++t) {
        if (!g.supervision_mask[i][t]) continue;
        surrogate += std::exp(g.token_logprobs_new[i][t] -
                              g.token_logprobs_old[i][t]) *
                     adv[i];
        ++tokens;
      }
    }
    const double want =
        tokens == 0 ? 0.0 : -surrogate / static_cast<double>(tokens);
    CHECK(std::fabs(r.loss - want) <= 1e-10);
  }
}

TEST_CASE("zero-variance groups empty out under filtering") {
  GroupRollout g;
  g.rewards = {0.7, 0.7, 0.7};
  g.token_logprobs_new = {{-1.0}, {-1.0}, {-1.0}};
  g.token_logprobs_old = {{-1.0}, {-1.0}, {-1.0}};
  g.token_logprobs_ref = {{-1.0}, {-1.0}, {-1.0}};
  g.supervision_mask = {{1}, {1}, {1}};

  GrpoConfig cfg;
  cfg.filter_zero_advantage = true;
  const GrpoResult filtered = grpo_loss(g, cfg);
  CHECK(filtered.empty_after_filter);
  CHECK(filtered.loss == 0.0);
  CHECK(filtered.kept.empty());
  CHECK(filtered.supervised_tokens == 0);

  // Without filtering the zero advantages stay in; the surrogate term dies
  // but the divergence regularizer remains live.
  cfg.filter_zero_advantage = false;
  const GrpoResult kept = grpo_loss(g, cfg);
  CHECK_FALSE(kept.empty_after_filter);
  CHECK(kept.kept.size() == 3);
  CHECK(kept.loss == 0.0);  // new == ref here, so the estimator is 0 too
}

TEST_CASE("groups with no supervised tokens have a defined zero loss") {
  GroupRollout g;
  g.rewards = {1.0, 2.0};
  g.token_logprobs_new = {{-1.0}, {}};
  g.token_logprobs_old = {{-1.5}, {}};
  g.token_logprobs_ref = {{-1.0}, {}};
  g.supervision_mask = {{0}, {}};
  const GrpoResult r = grpo_loss(g, GrpoConfig{});
  CHECK(r.loss == 0.0);
  CHECK(r.supervised_tokens == 0);
  CHECK_FALSE(r.empty_after_filter);
  CHECK(r.kept.size() == 2);
}

TEST_CASE("shape violations are rejected") {
  GroupRollout g;
  g.rewards = {1.0, 2.0};
  g.token_logprobs_new = {{-1.0}};
  g.token_logprobs_old = {{-1.0}};
  g.token_logprobs_ref = {{-1.0}};
  g.supervision_mask = {{1}};
  CHECK_THROWS_AS(grpo_loss(g, GrpoConfig{}), Error);

  g.token_logprobs_new = {{-1.0}, {-1.0}};
  g.token_logprobs_old = {{-1.0}, {-1.0, -2.0}};
  g.token_logprobs_ref = {{-1.0}, {-1.0}};
  g.supervision_mask = {{1}, {1}};
  try {
    grpo_loss(g, GrpoConfig{});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
}

TEST_CASE("sft loss matches the filter-then-sum oracle") {
  Rng rng(0x9f05);
  for (int trial = 0; trial < 5000; ++trial) {
    const int len = rng.range(0, 40);
    std::vector<double> lp(static_cast<std::size_t>(len));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
      lp[static_cast<std::size_t>(t)] = rng.uniform(-6.0, 0.0);
      mask[static_cast<std::size_t>(t)] = rng.chance(0.6) ? 1 : 0;
    }
    const SftLossResult r = sft_loss(lp, mask);
    CHECK(std::fabs(r.loss - oracles::sft(lp, mask)) <= 1e-12);
    std::size_t want_count = 0;
    for (auto m : mask) want_count += m;
    CHECK(r.token_count == want_count);
  }
}

TEST_CASE("perfectly certain tokens give a loss of exactly zero") {
  const std::vector<double> lp(12, 0.0);  // log(1) everywhere
  const std::vector<std::uint8_t> mask(12, 1);
  const SftLossResult r = sft_loss(lp, mask);
  CHECK(r.loss == 0.0);
  CHECK(r.token_count == 12);

  CHECK_THROWS_AS(sft_loss({1.0}, {1, 0}), Error);
  const SftLossResult empty = sft_loss({}, {});
  CHECK(empty.loss == 0.0);
  CHECK(empty.token_count == 0);
}
