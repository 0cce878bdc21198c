#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "anomagent/agent_loop.hpp"
#include "anomagent/error.hpp"
#include "anomagent/rewards.hpp"
#include "anomagent/tools.hpp"
#include "gen.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace anomagent;
using namespace testutil;

namespace {

// Records the arguments of the last QE call it served.
class RecordingJudge final : public ToolBackend {
 public:
  explicit RecordingJudge(std::vector<QualityVerdict> verdicts)
      : inner_(77, gen::make_script(std::move(verdicts)), false) {}

  Observation invoke(ToolName tool, const Json& args,
                     const Trajectory& ctx) override {
    last_args = args;
    return inner_.invoke(tool, args, ctx);
  }
  std::string reverse_normalize(const std::string& image) override {
    return inner_.reverse_normalize(image);
  }

  Json last_args;

 private:
  SimulatedBackend inner_;
};

EpisodeResult scripted_episode(const std::vector<QualityVerdict>& verdicts) {
  SimulatedBackend backend(3, gen::make_script(verdicts), false);
  ScriptedPolicy policy;
  return run_episode({"hazelnut", "cut", "base.png"}, policy, backend,
                     LoopConfig{});
}

}  // namespace

TEST_CASE("reward pipeline matches the independent oracle at scale") {
  Rng rng(0x4e01);
  const TransitionTable table = TransitionTable::default_table();
  for (int i = 0; i < 12000; ++i) {
    const EpisodeResult e = gen::random_episode(rng);
    const RewardConfig w = gen::random_reward_config(rng);
    const RewardBreakdown got = total_reward(e, w, table);
    const oracles::RewardParts want = oracles::total_reward(e, w);
    CHECK(std::fabs(got.task - want.task) <= 1e-10);
    CHECK(std::fabs(got.reflection - want.reflection) <= 1e-10);
    CHECK(std::fabs(got.behavior - want.behavior) <= 1e-10);
    CHECK(std::fabs(got.total - want.total) <= 1e-10);
  }
}

TEST_CASE("reflection sums only the improvements") {
  CHECK(reflection_reward({}) == 0.0);
  CHECK(reflection_reward({0.7}) == 0.0);
  CHECK(reflection_reward({0.2, 0.5, 0.9}) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(reflection_reward({0.9, 0.5, 0.2}) == 0.0);
  CHECK(reflection_reward({0.5, 0.2, 0.8}) == doctest::Approx(0.6).epsilon(1e-12));
  // Invariant: shuffling scores never changes the sum of positive steps
  // bound: reflection <= max - min summed over ascents. Spot property:
  // a V-shaped dip recovers only the climb out of the dip.
  CHECK(reflection_reward({0.8, 0.1, 0.8}) == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("scripted episodes earn clean behavior terms") {
  const RewardConfig w;
  const TransitionTable table = TransitionTable::default_table();
  for (const auto& verdicts :
       {std::vector<QualityVerdict>{{4, 4, "ok"}},
        std::vector<QualityVerdict>{{2, 2, "low"}, {4, 5, "good"}},
        std::vector<QualityVerdict>{{2, 2, "low"}, {3, 3, "mid"}, {4, 5, "good"}}}) {
    const EpisodeResult e = scripted_episode(verdicts);
    const BehaviorRewardResult b = behavior_reward(e, w, table);
    CHECK(b.terms.transition_penalty == 0.0);
    CHECK(b.terms.format_indicator == 1.0);
    CHECK(b.terms.length_penalty == 0.0);
  }
}

TEST_CASE("retrieval bonus requires a genuinely low preceding score") {
  const RewardConfig w;  // delta = 0.5
  const TransitionTable table = TransitionTable::default_table();

  // Scripted dual with KR: first score 0.4 < delta, so the bonus lands.
  const EpisodeResult with_kr =
      scripted_episode({{2, 2, "low"}, {4, 5, "good"}});
  const BehaviorRewardResult b = behavior_reward(with_kr, w, table);
  CHECK(b.terms.kr_bonus == doctest::Approx(w.lambda_kr).epsilon(1e-12));

  // Hand-built: retrieval after a high score earns nothing.
  EpisodeResult e = with_kr;
  e.qe_scores[0] = 0.9;  // pretend the first review was strong
  CHECK(behavior_reward(e, w, table).terms.kr_bonus == 0.0);

  // Retrieval before any evaluation earns nothing.
  EpisodeResult early;
  early.trajectory = with_kr.trajectory;
  early.action_sequence = {ToolName::KR, ToolName::PG, ToolName::IG, ToolName::QE};
  early.qe_scores = {0.1};
  early.terminated_by = Termination::TurnBudget;
  CHECK(behavior_reward(early, w, table).terms.kr_bonus == 0.0);
}

TEST_CASE("length penalty bites only past the turn budget") {
  RewardConfig w;
  const TransitionTable table = TransitionTable::default_table();
  const EpisodeResult e =
      scripted_episode({{2, 2, "low"}, {3, 3, "mid"}, {4, 5, "good"}});
  // This episode thinks 10 times (9 tool rounds + the answer turn).
  w.t_max = 12;
  CHECK(behavior_reward(e, w, table).terms.length_penalty == 0.0);
  w.t_max = 10;
  CHECK(behavior_reward(e, w, table).terms.length_penalty == 0.0);
  w.t_max = 7;
  CHECK(behavior_reward(e, w, table).terms.length_penalty ==
        doctest::Approx(3 * w.lambda_t).epsilon(1e-12));
}

TEST_CASE("adjacent swaps of distinct actions strictly lower the behavior term") {
  // The only two-cycle in the default table is the QE/IG refinement loop, so
  // swapping any adjacent pair of distinct tools in a violation-free sequence
  // must introduce at least one bad edge; the retrieval bonus can recover at
  // most lambda_kr of the unit penalty.
  Rng rng(0x4e02);
  const RewardConfig w;  // lambda_kr = 0.2 < unit penalty
  const TransitionTable table = TransitionTable::default_table();
  int tested = 0;
  while (tested < 1000) {
    EpisodeResult e = gen::random_episode(rng);
    if (e.action_sequence.size() < 2) continue;
    const BehaviorRewardResult before = behavior_reward(e, w, table);
    if (before.terms.transition_penalty != 0.0) continue;  // legal walks only
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i + 1 < e.action_sequence.size(); ++i) {
      if (e.action_sequence[i] != e.action_sequence[i + 1]) candidates.push_back(i);
    }
    if (candidates.empty()) continue;
    const std::size_t i = candidates[static_cast<std::size_t>(
        rng.range(0, static_cast<int>(candidates.size()) - 1))];
    std::swap(e.action_sequence[i], e.action_sequence[i + 1]);
    const BehaviorRewardResult after = behavior_reward(e, w, table);
    CHECK(after.terms.transition_penalty <= -1.0);
    CHECK(after.value < before.value);
    ++tested;
  }
}

TEST_CASE("reflection is monotone under end-point perturbations") {
  Rng rng(0x4e03);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> scores;
    const int n = rng.range(2, 8);
    for (int i = 0; i < n; ++i) scores.push_back(rng.uniform(0.0, 1.0));
    const double base = reflection_reward(scores);

    // Raising the final score raises the sum by at most the raise.
    const double d = rng.uniform(0.0, 0.5);
    std::vector<double> raised = scores;
    raised.back() += d;
    const double up = reflection_reward(raised);
    CHECK(up >= base - 1e-12);
    CHECK(up <= base + d + 1e-12);

    // Appending an improvement adds exactly the improvement; appending a
    // regression adds nothing.
    std::vector<double> improved = scores;
    improved.push_back(scores.back() + d);
    CHECK(reflection_reward(improved) == doctest::Approx(base + d).epsilon(1e-12));
    std::vector<double> worsened = scores;
    worsened.push_back(scores.back() - d);
    CHECK(reflection_reward(worsened) == doctest::Approx(base).epsilon(1e-12));

    // Total ascent dominates the net change and never goes negative.
    CHECK(base >= std::max(0.0, scores.back() - scores.front()) - 1e-12);
  }
}

TEST_CASE("task reward without a judge reuses the last recorded score") {
  EpisodeResult e = scripted_episode({{3, 3, "mid"}, {4, 4, "good"}});
  const TaskRewardResult r = task_reward(e);
  CHECK(r.value == 0.8);
  CHECK_FALSE(r.no_generation);

  e.qe_scores.clear();
  const TaskRewardResult none = task_reward(e);
  CHECK(none.value == 0.0);
  CHECK(none.no_generation);
}

TEST_CASE("task reward with a judge re-evaluates the answered image") {
  const EpisodeResult e =
      scripted_episode({{2, 2, "low"}, {3, 3, "mid"}, {4, 5, "good"}});
  REQUIRE(e.trajectory.image_count() == 4);

  RecordingJudge judge({{5, 4, "independent check"}});
  const TaskRewardResult r = task_reward(e, &judge);
  CHECK(r.value == doctest::Approx(0.9).epsilon(1e-12));
  CHECK_FALSE(r.no_generation);
  CHECK(judge.last_args.at("anomaly_image").get<std::int64_t>() == 4);
  CHECK(judge.last_args.at("item_name").get<std::string>() == "hazelnut");

  // The answer's selection wins over the registry tail.
  EpisodeResult picky = e;
  for (auto& seg : picky.trajectory.segments) {
    if (seg.kind() == SegmentKind::Answer) {
      AnswerPayload a = seg.answer();
      a.final_image_index = 2;
      seg = Segment::answer_of(a);
    }
  }
  task_reward(picky, &judge);
  CHECK(judge.last_args.at("anomaly_image").get<std::int64_t>() == 2);

  // Nothing but the base image: flagged, judge never asked.
  EpisodeResult empty;
  empty.trajectory = Trajectory{{"a", "b", "img"}, {}, {"img"}};
  judge.last_args = Json();
  const TaskRewardResult no_gen = task_reward(empty, &judge);
  CHECK(no_gen.value == 0.0);
  CHECK(no_gen.no_generation);
  CHECK(judge.last_args.is_null());
}

TEST_CASE("total reward composes the three weighted terms") {
  const RewardConfig w;
  const TransitionTable table = TransitionTable::default_table();
  const EpisodeResult e = scripted_episode({{2, 2, "low"}, {4, 5, "good"}});
  const RewardBreakdown b = total_reward(e, w, table);
  CHECK(b.task == 0.9);
  CHECK(b.reflection == doctest::Approx(0.5).epsilon(1e-12));
  // Clean transitions, one justified retrieval, valid format, no overrun.
  CHECK(b.behavior == doctest::Approx(1.0 + w.lambda_kr).epsilon(1e-12));
  CHECK(b.total == doctest::Approx(w.alpha * 0.9 + w.beta * 0.5 +
                                   w.gamma * (1.0 + w.lambda_kr))
                       .epsilon(1e-12));
  CHECK_FALSE(b.no_generation);
}

TEST_CASE("reward breakdowns round-trip through JSON and JSONL") {
  Rng rng(0x4e04);
  const TransitionTable table = TransitionTable::default_table();
  std::vector<RewardBreakdown> rows;
  for (int i = 0; i < 8; ++i) {
    rows.push_back(total_reward(gen::random_episode(rng),
                                gen::random_reward_config(rng), table));
  }
  for (const auto& b : rows) {
    const RewardBreakdown back = RewardBreakdown::from_json(b.to_json());
    CHECK(back.to_json() == b.to_json());
  }

  TempDir dir("rewards");
  write_breakdown_jsonl(dir.file("r.jsonl"), rows);
  const auto loaded = read_breakdown_jsonl(dir.file("r.jsonl"));
  REQUIRE(loaded.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(loaded[i].to_json() == rows[i].to_json());
  }

  CHECK_THROWS_AS(RewardBreakdown::from_json(Json{{"task", 1.0}}), Error);
}

TEST_CASE("transition table edges and node names") {
  const TransitionTable t = TransitionTable::default_table();
  CHECK(t.allowed.size() == 8);
  CHECK(t.is_allowed(TransitionNode::Start, TransitionNode::PG));
  CHECK(t.is_allowed(TransitionNode::QE, TransitionNode::MG));
  CHECK_FALSE(t.is_allowed(TransitionNode::PG, TransitionNode::QE));
  CHECK_FALSE(t.is_allowed(TransitionNode::Answer, TransitionNode::PG));
  CHECK_FALSE(t.is_allowed(TransitionNode::MG, TransitionNode::IG));

  for (ToolName tool : all_tools()) {
    CHECK(std::string(transition_node_name(transition_node(tool))) ==
          tool_wire_name(tool));
  }
  CHECK(std::string(transition_node_name(TransitionNode::Start)) == "start");
  CHECK(std::string(transition_node_name(TransitionNode::Answer)) == "answer");
}
