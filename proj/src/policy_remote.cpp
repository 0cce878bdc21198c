#include "anomagent/agent_loop.hpp"
#include "anomagent/error.hpp"
#include "anomagent/prompts.hpp"
#include "http_client.hpp"

// Wraps a chat endpoint as a Policy. The conversation mirrors the transcript:
// each assistant message is a serialized thinking+action pair, each user
// message a serialized tool return. The model's reply must itself parse under
// the tag grammar as exactly one thinking segment plus one action.

namespace anomagent {

RemotePolicy::RemotePolicy(BackendConfig config, double temperature)
    : config_(std::move(config)), temperature_(temperature) {
  if (config_.endpoint.empty()) {
    throw Error(ErrorCode::ConfigError, "remote policy requires an endpoint");
  }
}

PolicyTurn RemotePolicy::next_turn(const Trajectory& t, const LoopConfig&) {
  Json messages = Json::array();
  messages.push_back({{"role", "system"}, {"content", prompts::system_prompt()}});
  messages.push_back(
      {{"role", "user"},
       {"content", prompts::user_prompt(t.task.item_name, t.task.anomaly_type)}});

  std::vector<Segment> pending;
  for (const auto& seg : t.segments) {
    if (seg.kind() == SegmentKind::ToolReturn) {
      messages.push_back(
          {{"role", "assistant"}, {"content", serialize_segments(pending)}});
      pending.clear();
      messages.push_back(
          {{"role", "user"}, {"content", serialize_segments({seg})}});
    } else {
      pending.push_back(seg);
    }
  }
  if (!pending.empty()) {
    // A trailing thinking+call without its return should not happen mid-loop,
    // but serialize whatever is there rather than silently dropping it.
    messages.push_back(
        {{"role", "assistant"}, {"content", serialize_segments(pending)}});
  }

  const std::string reply =
      detail::http_chat_content(config_, std::move(messages), temperature_);

  std::vector<Segment> parsed;
  try {
    parsed = parse_transcript(reply);
  } catch (const Error& e) {
    throw Error(ErrorCode::PolicyError,
                std::string("policy reply does not parse: ") + e.what());
  }
  if (parsed.size() != 2 || parsed[0].kind() != SegmentKind::Thinking) {
    throw Error(ErrorCode::PolicyError,
                "policy reply must be one thinking segment plus one action");
  }
  PolicyTurn turn;
  turn.thinking = parsed[0].thinking();
  if (parsed[1].kind() == SegmentKind::ToolCall) {
    turn.action = parsed[1].call();
  } else if (parsed[1].kind() == SegmentKind::Answer) {
    turn.action = parsed[1].answer();
  } else {
    throw Error(ErrorCode::PolicyError,
                "policy reply's second segment must be a tool call or answer");
  }
  return turn;
}

}  // namespace anomagent
