#include "anomagent/agent_loop.hpp"

#include <cstdio>
#include <fstream>

#include "anomagent/error.hpp"

namespace anomagent {

const char* termination_name(Termination t) {
  switch (t) {
    case Termination::Answer: return "answer";
    case Termination::TurnBudget: return "turn_budget";
    case Termination::Error: return "error";
  }
  return "error";
}

Termination termination_from_name(const std::string& name) {
  if (name == "answer") return Termination::Answer;
  if (name == "turn_budget") return Termination::TurnBudget;
  if (name == "error") return Termination::Error;
  throw Error(ErrorCode::SchemaViolation, "unknown termination '" + name + "'");
}

namespace {

std::string format_score(double score) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.1f", score);
  return buf;
}

// Walks the transcript once and distills what the scripted policy needs.
struct TranscriptView {
  int ig_calls = 0;
  bool kr_called = false;              // anywhere in the episode
  bool kr_after_last_qe = false;       // knowledge available for this round
  std::string last_ig_prompt;
  std::int64_t last_image_index = 1;   // most recent generated (or base) image
  const Json* last_qe = nullptr;       // most recent QE observation
  const Json* last_return = nullptr;
  ToolName last_return_tool = ToolName::PG;
  std::string last_knowledge;
  bool any_return = false;
};

TranscriptView scan(const Trajectory& t) {
  TranscriptView v;
  for (const auto& seg : t.segments) {
    if (seg.kind() == SegmentKind::ToolCall) {
      if (seg.call().name == ToolName::IG) {
        ++v.ig_calls;
        v.last_ig_prompt = seg.call().arguments.at("prompt").get<std::string>();
      }
      if (seg.call().name == ToolName::KR) v.kr_called = true;
    } else if (seg.kind() == SegmentKind::ToolReturn) {
      v.any_return = true;
      v.last_return = &seg.tool_return().content;
      v.last_return_tool = seg.tool_return().tool;
      switch (seg.tool_return().tool) {
        case ToolName::IG:
          v.last_image_index =
              seg.tool_return().content.at("new_image_index").get<std::int64_t>();
          break;
        case ToolName::QE:
          v.last_qe = &seg.tool_return().content;
          v.kr_after_last_qe = false;
          break;
        case ToolName::KR:
          v.kr_after_last_qe = true;
          v.last_knowledge =
              seg.tool_return().content.at("knowledge").get<std::string>();
          break;
        default:
          break;
      }
    }
  }
  return v;
}

PolicyTurn make_call(std::string thinking, ToolName tool, Json args) {
  PolicyTurn turn;
  turn.thinking = std::move(thinking);
  turn.action = ToolCallPayload{tool, std::move(args)};
  return turn;
}

std::string refined_prompt(const TranscriptView& v) {
  std::string prompt = v.last_ig_prompt;
  if (v.last_qe != nullptr) {
    prompt += " Reviewer feedback: " + v.last_qe->at("review").get<std::string>();
  }
  if (v.kr_after_last_qe && !v.last_knowledge.empty()) {
    prompt += " Domain knowledge: " + v.last_knowledge;
  }
  return prompt;
}

}  // namespace

PolicyTurn scripted_policy(const Trajectory& t, const LoopConfig& cfg) {
  const TranscriptView v = scan(t);
  const std::string& item = t.task.item_name;
  const std::string& anomaly = t.task.anomaly_type;

  if (!v.any_return) {
    Json args = Json::object();
    args["image"] = 1;
    args["item_name"] = item;
    args["anomaly_type"] = anomaly;
    return make_call("Draft an editing prompt for a " + anomaly + " on the " +
                         item + ".",
                     ToolName::PG, std::move(args));
  }

  switch (v.last_return_tool) {
    case ToolName::PG: {
      Json args = Json::object();
      args["prompt"] = v.last_return->at("prompt").get<std::string>();
      args["target_image"] = 1;
      return make_call("Generate a candidate image with the drafted prompt.",
                       ToolName::IG, std::move(args));
    }
    case ToolName::IG: {
      Json args = Json::object();
      args["anomaly_image"] = v.last_image_index;
      args["item_name"] = item;
      args["anomaly_type"] = anomaly;
      return make_call("Assess placement and realism of image " +
                           std::to_string(v.last_image_index) + ".",
                       ToolName::QE, std::move(args));
    }
    case ToolName::QE: {
      const double score = v.last_qe->at("score").get<double>();
      if (score >= cfg.theta || v.ig_calls >= cfg.max_generations) {
        Json args = Json::object();
        args["anomaly_image"] = v.last_image_index;
        const std::string why =
            score >= cfg.theta
                ? "Score " + format_score(score) + " clears the bar; extract the mask."
                : "Generation budget spent; extract the mask for the last image.";
        return make_call(why, ToolName::MG, std::move(args));
      }
      if (score < cfg.kr_trigger && !v.kr_called) {
        Json args = Json::object();
        args["item_name"] = item;
        args["anomaly_type"] = anomaly;
        return make_call("Score " + format_score(score) +
                             " is low; consult domain knowledge first.",
                         ToolName::KR, std::move(args));
      }
      Json args = Json::object();
      args["prompt"] = refined_prompt(v);
      args["target_image"] = 1;
      return make_call("Refine the prompt with the reviewer feedback and retry.",
                       ToolName::IG, std::move(args));
    }
    case ToolName::KR: {
      Json args = Json::object();
      args["prompt"] = refined_prompt(v);
      args["target_image"] = 1;
      return make_call(
          "Fold the retrieved knowledge into the prompt and retry.",
          ToolName::IG, std::move(args));
    }
    case ToolName::MG: {
      PolicyTurn turn;
      turn.thinking = "Mask extracted; wrap up.";
      AnswerPayload answer;
      answer.status = "success";
      answer.final_image_index = v.last_image_index;
      answer.mask_generated = true;
      answer.synthesis_logic =
          "Accepted image " + std::to_string(v.last_image_index) + " after " +
          std::to_string(v.ig_calls) + " generation(s); mask extracted.";
      turn.action = std::move(answer);
      return turn;
    }
  }
  throw Error(ErrorCode::PolicyError, "transcript state not recognized");
}

void validate_loop_config(const LoopConfig& cfg) {
  if (!(cfg.kr_trigger >= 0.0 && cfg.kr_trigger <= cfg.theta && cfg.theta <= 1.0)) {
    throw Error(ErrorCode::ConfigError,
                "need 0 <= kr_trigger <= theta <= 1");
  }
  if (cfg.max_generations < 1) {
    throw Error(ErrorCode::ConfigError, "max_generations must be >= 1");
  }
  if (cfg.t_max < 2 * cfg.max_generations + 2) {
    throw Error(ErrorCode::ConfigError,
                "t_max must be at least 2*max_generations + 2");
  }
}

EpisodeResult run_episode(const TaskSpec& task, Policy& policy,
                          ToolBackend& backend, const LoopConfig& cfg) {
  validate_loop_config(cfg);
  EpisodeResult result;
  Trajectory& t = result.trajectory;
  t.task = task;
  t.images = {task.normal_image};

  int turns = 0;
  while (true) {
    if (turns >= cfg.t_max) {
      result.terminated_by = Termination::TurnBudget;
      break;
    }
    PolicyTurn turn;
    try {
      turn = policy.next_turn(t, cfg);
    } catch (const Error& e) {
      result.terminated_by = Termination::Error;
      result.error = e.what();
      break;
    }
    ++turns;
    t.segments.push_back(Segment::thinking_of(turn.thinking));
    if (turn.is_answer()) {
      t.segments.push_back(Segment::answer_of(turn.answer()));
      result.terminated_by = Termination::Answer;
      break;
    }

    const ToolCallPayload& call = turn.call();
    t.segments.push_back(Segment::call_of(call.name, call.arguments));
    result.action_sequence.push_back(call.name);
    Observation obs;
    try {
      obs = backend.invoke(call.name, call.arguments, t);
    } catch (const Error& e) {
      result.terminated_by = Termination::Error;
      result.error = e.what();
      break;
    }
    // Revalidate before the observation enters the trajectory; a backend that
    // hands back an off-schema payload must not poison the transcript.
    try {
      validate_observation(obs.payload.tool, obs.payload.content);
      if (call.name == ToolName::IG) {
        const std::int64_t idx =
            obs.payload.content.at("new_image_index").get<std::int64_t>();
        if (idx != t.image_count() + 1 || !obs.new_image) {
          throw Error(ErrorCode::BadResponse,
                      "image generation must yield the next registry index");
        }
        t.images.push_back(*obs.new_image);
      }
    } catch (const Error& e) {
      result.terminated_by = Termination::Error;
      result.error = e.what();
      break;
    }
    t.segments.push_back(Segment::return_of(obs.payload.tool, obs.payload.content));
    if (call.name == ToolName::QE) {
      result.qe_scores.push_back(obs.payload.content.at("score").get<double>());
    }
  }

  if (!result.qe_scores.empty()) result.final_score = result.qe_scores.back();
  return result;
}

std::vector<EpisodeResult> run_group(const TaskSpec& task, Policy& policy,
                                     const BackendFactory& factory,
                                     const LoopConfig& cfg, int g,
                                     std::uint64_t base_seed) {
  if (g < 2) {
    throw Error(ErrorCode::GroupTooSmall,
                "group size must be >= 2, got " + std::to_string(g));
  }
  std::vector<EpisodeResult> results;
  results.reserve(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    auto backend = factory.make(base_seed ^ static_cast<std::uint64_t>(i));
    results.push_back(run_episode(task, policy, *backend, cfg));
  }
  return results;
}

Json EpisodeResult::to_json() const {
  Json j = Json::object();
  j["trajectory"] = trajectory_to_json(trajectory);
  j["final_score"] = final_score;
  j["qe_scores"] = qe_scores;
  Json actions = Json::array();
  for (ToolName a : action_sequence) actions.push_back(tool_wire_name(a));
  j["action_sequence"] = actions;
  j["terminated_by"] = termination_name(terminated_by);
  if (terminated_by == Termination::Error) j["error"] = error;
  return j;
}

EpisodeResult EpisodeResult::from_json(const Json& j) {
  if (!j.is_object() || !j.contains("trajectory") || !j.contains("final_score") ||
      !j.contains("qe_scores") || !j.contains("action_sequence") ||
      !j.contains("terminated_by")) {
    throw Error(ErrorCode::SchemaViolation, "episode row is missing fields");
  }
  EpisodeResult r;
  r.trajectory = trajectory_from_json(j["trajectory"]);
  r.final_score = j["final_score"].get<double>();
  for (const auto& s : j["qe_scores"]) r.qe_scores.push_back(s.get<double>());
  for (const auto& a : j["action_sequence"]) {
    auto tool = tool_from_wire_name(a.get<std::string>());
    if (!tool) {
      throw Error(ErrorCode::UnknownTool,
                  "episode row names unknown tool " + a.dump());
    }
    r.action_sequence.push_back(*tool);
  }
  r.terminated_by = termination_from_name(j["terminated_by"].get<std::string>());
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  return r;
}

void write_episode_jsonl(const std::string& path,
                         const std::vector<EpisodeResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  for (const auto& r : results) out << r.to_json().dump() << "\n";
}

std::vector<EpisodeResult> read_episode_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<EpisodeResult> results;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json row = Json::parse(line, nullptr, false);
    if (row.is_discarded()) {
      throw Error(ErrorCode::MalformedJson, "bad JSONL row in '" + path + "'");
    }
    results.push_back(EpisodeResult::from_json(row));
  }
  return results;
}

}  // namespace anomagent
