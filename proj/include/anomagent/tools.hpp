#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "anomagent/config.hpp"
#include "anomagent/protocol.hpp"

// Tool invocation with two interchangeable backend families: deterministic
// seeded simulators (pure functions of seed, script, and call ordinal) and
// remote HTTP services. Callers interact only with ToolBackend; the agent
// loop and the trajectory builder behave identically under any backend that
// yields the same observation sequence.

namespace anomagent {

struct QualityVerdict {
  int location_score = 0;  // 0..5
  int quality_score = 0;   // 0..5
  std::string review;

  double score() const { return (location_score + quality_score) / 10.0; }

  // Observation content object {location_score, quality_score, review, score}.
  Json to_content() const;
  // Parses and range-checks; the scalar score, if present, must equal the
  // derived one. Throws Error{BadResponse}.
  static QualityVerdict from_content(const Json& content);

  bool operator==(const QualityVerdict&) const = default;
};

// Deterministic script for the simulated backend. Verdicts are consumed in
// the order QE is called; once exhausted, the last verdict repeats.
struct SimScript {
  std::vector<QualityVerdict> qe_score_sequence;
  std::string pg_prompt_template;  // {item_name} / {anomaly_type} slots
  // item_name -> anomaly_type -> knowledge text
  std::map<std::string, std::map<std::string, std::string>> kr_knowledge_table;

  static SimScript default_script();
  static SimScript from_json(const Json& j);
  Json to_json() const;
};

// Reads a script JSON file; throws Error{ConfigError} on missing/invalid.
SimScript load_sim_script(const std::string& path);

// A tool execution result: the wire-level observation plus, for IG, the
// reference the caller must append to the trajectory's image registry at the
// observed new_image_index.
struct Observation {
  ToolReturnPayload payload;
  std::optional<std::string> new_image;
};

class ToolBackend {
 public:
  virtual ~ToolBackend() = default;

  // Preconditions: args schema-valid, referenced image indices resolvable in
  // ctx (checked; violations throw SchemaViolation / DanglingImage).
  virtual Observation invoke(ToolName tool, const Json& args,
                             const Trajectory& ctx) = 0;

  // Reconstructs a defect-free counterpart of an anomaly image and returns
  // its reference.
  virtual std::string reverse_normalize(const std::string& anomaly_image) = 0;
};

// Pure-function backend: observations depend only on (seed, script, call
// ordinal, args). Keeps a per-instance QE counter, so use one instance per
// trajectory.
class SimulatedBackend final : public ToolBackend {
 public:
  SimulatedBackend(std::uint64_t seed, SimScript script, bool seed_jitter = false);

  Observation invoke(ToolName tool, const Json& args,
                     const Trajectory& ctx) override;
  std::string reverse_normalize(const std::string& anomaly_image) override;

  std::uint64_t seed() const { return seed_; }
  int qe_calls() const { return qe_calls_; }

 private:
  QualityVerdict next_verdict();

  std::uint64_t seed_;
  SimScript script_;
  bool seed_jitter_;
  int qe_calls_ = 0;
};

// HTTP backend: chat-completions-style requests for PG/QE/KR, image-edit
// style requests for IG/MG and reverse normalization. Transport failures and
// 5xx responses are retried with exponential backoff, then surface as
// BackendUnavailable; unusable payloads surface as BadResponse.
class RemoteBackend final : public ToolBackend {
 public:
  explicit RemoteBackend(BackendConfig config);

  Observation invoke(ToolName tool, const Json& args,
                     const Trajectory& ctx) override;
  std::string reverse_normalize(const std::string& anomaly_image) override;

 private:
  std::string chat_request(const std::string& system_prompt,
                           const Json& user_payload);
  std::string edit_request(const std::string& image_ref,
                           const std::string& prompt);
  Json post_json(const std::string& path, const Json& body);

  BackendConfig config_;
};

// Per-episode backend construction. Simulated backends get a fresh instance
// per seed (independent call counters); remote backends are stateless per
// call, so each make() hands out an equivalent client.
class BackendFactory {
 public:
  explicit BackendFactory(const Config& config);

  std::unique_ptr<ToolBackend> make(std::uint64_t seed) const;
  const SimScript& script() const { return script_; }

 private:
  Config config_;
  SimScript script_;
};

}  // namespace anomagent
