#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "anomagent/config.hpp"
#include "anomagent/protocol.hpp"
#include "anomagent/tools.hpp"

// The multi-turn thought-action-observation environment. A policy produces
// turns (thinking plus either a tool call or the final answer); the
// environment executes tool calls against a backend, appends observations,
// and never vetoes a valid action — discipline comes from rewards, not from
// the environment.

namespace anomagent {

struct PolicyTurn {
  std::string thinking;
  std::variant<ToolCallPayload, AnswerPayload> action;

  bool is_answer() const { return action.index() == 1; }
  const ToolCallPayload& call() const { return std::get<0>(action); }
  const AnswerPayload& answer() const { return std::get<1>(action); }
};

enum class Termination { Answer, TurnBudget, Error };

const char* termination_name(Termination t);
Termination termination_from_name(const std::string& name);

struct EpisodeResult {
  Trajectory trajectory;
  double final_score = 0.0;            // last QE score; 0 when QE never ran
  std::vector<double> qe_scores;       // in QE call order
  std::vector<ToolName> action_sequence;
  Termination terminated_by = Termination::Error;
  std::string error;                   // set when terminated_by == Error

  Json to_json() const;
  static EpisodeResult from_json(const Json& j);
};

class Policy {
 public:
  virtual ~Policy() = default;
  // May throw Error{PolicyError}; the episode then ends with a truncated but
  // persisted trajectory.
  virtual PolicyTurn next_turn(const Trajectory& transcript,
                               const LoopConfig& cfg) = 0;
};

// Deterministic reference policy: drafts a prompt, generates, evaluates,
// optionally retrieves knowledge once per episode when the score falls below
// kr_trigger, refines until theta or the generation budget, then masks and
// answers. Pure function of the transcript, hence reusable across episodes.
PolicyTurn scripted_policy(const Trajectory& transcript, const LoopConfig& cfg);

class ScriptedPolicy final : public Policy {
 public:
  PolicyTurn next_turn(const Trajectory& transcript,
                       const LoopConfig& cfg) override {
    return scripted_policy(transcript, cfg);
  }
};

// Adapter that asks a chat endpoint to produce each turn. The reply text
// must parse as exactly one thinking segment followed by one tool call or
// answer; anything else is a PolicyError.
class RemotePolicy final : public Policy {
 public:
  explicit RemotePolicy(BackendConfig config, double temperature = 0.7);

  PolicyTurn next_turn(const Trajectory& transcript,
                       const LoopConfig& cfg) override;

 private:
  BackendConfig config_;
  double temperature_;
};

// Throws Error{ConfigError} when thresholds or budgets are inconsistent.
void validate_loop_config(const LoopConfig& cfg);

EpisodeResult run_episode(const TaskSpec& task, Policy& policy,
                          ToolBackend& backend, const LoopConfig& cfg);

// g independent episodes; episode i runs against factory.make(base_seed ^ i).
// Per-episode failures are recorded in their results, never aborting siblings.
std::vector<EpisodeResult> run_group(const TaskSpec& task, Policy& policy,
                                     const BackendFactory& factory,
                                     const LoopConfig& cfg, int g,
                                     std::uint64_t base_seed);

void write_episode_jsonl(const std::string& path,
                         const std::vector<EpisodeResult>& results);
std::vector<EpisodeResult> read_episode_jsonl(const std::string& path);

}  // namespace anomagent
