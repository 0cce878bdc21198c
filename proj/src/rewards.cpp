#include "anomagent/rewards.hpp"

#include <algorithm>
#include <fstream>

#include "anomagent/error.hpp"
#include "anomagent/kernels.hpp"

namespace anomagent {

TransitionNode transition_node(ToolName tool) {
  switch (tool) {
    case ToolName::PG: return TransitionNode::PG;
    case ToolName::IG: return TransitionNode::IG;
    case ToolName::QE: return TransitionNode::QE;
    case ToolName::KR: return TransitionNode::KR;
    case ToolName::MG: return TransitionNode::MG;
  }
  return TransitionNode::PG;
}

const char* transition_node_name(TransitionNode n) {
  switch (n) {
    case TransitionNode::Start: return "start";
    case TransitionNode::PG: return "prompt_gen";
    case TransitionNode::IG: return "image_gen";
    case TransitionNode::QE: return "quality_eval";
    case TransitionNode::KR: return "knowledge_retrieval";
    case TransitionNode::MG: return "mask_gen";
    case TransitionNode::Answer: return "answer";
  }
  return "";
}

TransitionTable TransitionTable::default_table() {
  TransitionTable t;
  t.allowed = {
      {TransitionNode::Start, TransitionNode::PG},
      {TransitionNode::PG, TransitionNode::IG},
      {TransitionNode::IG, TransitionNode::QE},
      {TransitionNode::QE, TransitionNode::IG},
      {TransitionNode::QE, TransitionNode::KR},
      {TransitionNode::QE, TransitionNode::MG},
      {TransitionNode::KR, TransitionNode::IG},
      {TransitionNode::MG, TransitionNode::Answer},
  };
  t.penalty = -1.0;
  return t;
}

TaskRewardResult task_reward(const EpisodeResult& e, ToolBackend* judge) {
  if (judge == nullptr) {
    if (e.qe_scores.empty()) return {0.0, true};
    return {e.qe_scores.back(), false};
  }
  // The judge can only evaluate an image that exists beyond the base slot.
  if (e.trajectory.image_count() < 2) return {0.0, true};
  std::int64_t final_index = e.trajectory.image_count();
  for (const auto& seg : e.trajectory.segments) {
    if (seg.kind() == SegmentKind::Answer) {
      final_index = seg.answer().final_image_index;
    }
  }
  Json args = Json::object();
  args["anomaly_image"] = final_index;
  args["item_name"] = e.trajectory.task.item_name;
  args["anomaly_type"] = e.trajectory.task.anomaly_type;
  const Observation verdict = judge->invoke(ToolName::QE, args, e.trajectory);
  return {verdict.payload.content.at("score").get<double>(), false};
}

double reflection_reward(const std::vector<double>& qe_scores) {
  return kernels::max0_diff_sum(qe_scores.data(), qe_scores.size());
}

BehaviorRewardResult behavior_reward(const EpisodeResult& e,
                                     const RewardWeights& w,
                                     const TransitionTable& table) {
  BehaviorRewardResult r;

  // Transition discipline over the extended sequence: virtual start, the
  // tool actions, and the terminal answer when one was emitted.
  std::vector<TransitionNode> nodes;
  nodes.reserve(e.action_sequence.size() + 2);
  nodes.push_back(TransitionNode::Start);
  for (ToolName a : e.action_sequence) nodes.push_back(transition_node(a));
  if (e.terminated_by == Termination::Answer) {
    nodes.push_back(TransitionNode::Answer);
  }
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    if (!table.is_allowed(nodes[i - 1], nodes[i])) {
      r.terms.transition_penalty += table.penalty;
    }
  }

  // Retrieval is rewarded only when the most recent quality score before the
  // retrieval was genuinely low; retrieval before any evaluation earns
  // nothing.
  std::size_t qe_seen = 0;
  int justified_kr = 0;
  for (ToolName a : e.action_sequence) {
    if (a == ToolName::QE) {
      ++qe_seen;
    } else if (a == ToolName::KR && qe_seen >= 1 &&
               qe_seen <= e.qe_scores.size() &&
               e.qe_scores[qe_seen - 1] < w.delta) {
      ++justified_kr;
    }
  }
  r.terms.kr_bonus = w.lambda_kr * justified_kr;

  r.terms.format_indicator = check_format(e.trajectory) ? 1.0 : 0.0;

  // T counts policy turns, i.e. thinking segments.
  std::int64_t turns = 0;
  for (const auto& seg : e.trajectory.segments) {
    if (seg.kind() == SegmentKind::Thinking) ++turns;
  }
  r.terms.length_penalty =
      w.lambda_t * std::max<double>(0.0, static_cast<double>(turns - w.t_max));

  r.value = r.terms.transition_penalty + r.terms.kr_bonus +
            r.terms.format_indicator - r.terms.length_penalty;
  return r;
}

RewardBreakdown total_reward(const EpisodeResult& e, const RewardWeights& w,
                             const TransitionTable& table, ToolBackend* judge) {
  RewardBreakdown b;
  const TaskRewardResult task = task_reward(e, judge);
  b.task = task.value;
  b.no_generation = task.no_generation;
  b.reflection = reflection_reward(e.qe_scores);
  const BehaviorRewardResult beh = behavior_reward(e, w, table);
  b.behavior = beh.value;
  b.terms = beh.terms;
  b.total = w.alpha * b.task + w.beta * b.reflection + w.gamma * b.behavior;
  return b;
}

Json RewardBreakdown::to_json() const {
  Json j = Json::object();
  j["task"] = task;
  j["reflection"] = reflection;
  j["behavior"] = behavior;
  j["total"] = total;
  Json t = Json::object();
  t["transition_penalty"] = terms.transition_penalty;
  t["kr_bonus"] = terms.kr_bonus;
  t["format_indicator"] = terms.format_indicator;
  t["length_penalty"] = terms.length_penalty;
  j["terms"] = t;
  j["no_generation"] = no_generation;
  return j;
}

RewardBreakdown RewardBreakdown::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("task") || !j.contains("reflection") ||
      !j.contains("behavior") || !j.contains("total") || !j.contains("terms")) {
    throw Error(ErrorCode::SchemaViolation, "reward row is missing fields");
  }
  RewardBreakdown b;
  b.task = j["task"].get<double>();
  b.reflection = j["reflection"].get<double>();
  b.behavior = j["behavior"].get<double>();
  b.total = j["total"].get<double>();
  const Json& t = j["terms"];
  if (!t.is_object() || !t.contains("transition_penalty") ||
      !t.contains("kr_bonus") || !t.contains("format_indicator") ||
      !t.contains("length_penalty")) {
    throw Error(ErrorCode::SchemaViolation, "reward terms are missing fields");
  }
  b.terms.transition_penalty = t["transition_penalty"].get<double>();
  b.terms.kr_bonus = t["kr_bonus"].get<double>();
  b.terms.format_indicator = t["format_indicator"].get<double>();
  b.terms.length_penalty = t["length_penalty"].get<double>();
  if (j.contains("no_generation")) {
    b.no_generation = j["no_generation"].get<bool>();
  }
  return b;
}

void write_breakdown_jsonl(const std::string& path,
                           const std::vector<RewardBreakdown>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  for (const auto& r : rows) out << r.to_json().dump() << "\n";
}

std::vector<RewardBreakdown> read_breakdown_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<RewardBreakdown> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json row = Json::parse(line, nullptr, false);
    if (row.is_discarded()) {
      throw Error(ErrorCode::MalformedJson, "bad JSONL row in '" + path + "'");
    }
    rows.push_back(RewardBreakdown::from_json(row));
  }
  return rows;
}

}  // namespace anomagent
