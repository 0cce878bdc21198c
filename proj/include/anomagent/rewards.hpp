#pragma once

#include <set>
#include <utility>
#include <vector>

#include "anomagent/agent_loop.hpp"
#include "anomagent/config.hpp"
#include "anomagent/protocol.hpp"
#include "anomagent/tools.hpp"

// Verifiable reward over completed episodes: a task term (final quality), a
// reflection term (summed score improvements across consecutive
// generations), and a behavior term (transition discipline, justified
// retrieval, format validity, length). All pure functions unless a judge
// backend is supplied.

namespace anomagent {

using RewardWeights = RewardConfig;

// Transition endpoints extend the tool alphabet with the virtual start state
// and the terminal answer.
enum class TransitionNode { Start, PG, IG, QE, KR, MG, Answer };

TransitionNode transition_node(ToolName tool);
const char* transition_node_name(TransitionNode n);

// Closed edge set: every adjacent pair outside `allowed` costs `penalty`.
struct TransitionTable {
  std::set<std::pair<TransitionNode, TransitionNode>> allowed;
  double penalty = -1.0;

  bool is_allowed(TransitionNode from, TransitionNode to) const {
    return allowed.count({from, to}) > 0;
  }

  // Start->PG, PG->IG, IG->QE, QE->{IG,KR,MG}, KR->IG, MG->Answer.
  static TransitionTable default_table();
};

struct BehaviorTerms {
  double transition_penalty = 0.0;  // sum of per-violation penalties, <= 0
  double kr_bonus = 0.0;            // lambda_kr per justified retrieval
  double format_indicator = 0.0;    // 1 when the transcript is format-valid
  double length_penalty = 0.0;      // lambda_t * turns beyond budget, >= 0

  bool operator==(const BehaviorTerms&) const = default;
};

struct RewardBreakdown {
  double task = 0.0;
  double reflection = 0.0;
  double behavior = 0.0;
  double total = 0.0;
  BehaviorTerms terms;
  bool no_generation = false;

  Json to_json() const;
  static RewardBreakdown from_json(const Json& j);
};

struct TaskRewardResult {
  double value = 0.0;
  bool no_generation = false;
};

// Final-quality scalar. Without a judge, reuses the episode's last recorded
// quality score. With a judge backend, asks it for a fresh verdict on the
// episode's final image. An episode that never produced an image scores 0
// and is flagged.
TaskRewardResult task_reward(const EpisodeResult& e, ToolBackend* judge = nullptr);

// Sum of positive steps between consecutive scores; fewer than two scores
// yield 0.
double reflection_reward(const std::vector<double>& qe_scores);

struct BehaviorRewardResult {
  double value = 0.0;
  BehaviorTerms terms;
};

BehaviorRewardResult behavior_reward(const EpisodeResult& e,
                                     const RewardWeights& w,
                                     const TransitionTable& table);

RewardBreakdown total_reward(const EpisodeResult& e, const RewardWeights& w,
                             const TransitionTable& table,
                             ToolBackend* judge = nullptr);

void write_breakdown_jsonl(const std::string& path,
                           const std::vector<RewardBreakdown>& rows);
std::vector<RewardBreakdown> read_breakdown_jsonl(const std::string& path);

}  // namespace anomagent
