#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "anomagent/protocol.hpp"

// Runtime configuration, merged from four layers in increasing precedence:
// built-in defaults, an optional plain-text config file, environment
// variables, and explicit overrides (the CLI's --set flags and convenience
// options). Keys are namespaced: backend.*, sim.*, loop.*, rewards.*, grpo.*.

namespace anomagent {

struct BackendConfig {
  std::string kind = "sim";  // "sim" or "remote"
  std::string endpoint;      // base URL, remote backend only
  std::string api_key;
  std::string model = "anomagent-tools";
  int max_retries = 3;
  double backoff_initial_seconds = 1.0;
};

struct SimConfig {
  std::uint64_t seed = 0;
  std::string script;       // path to a simulation script JSON, optional
  bool seed_jitter = false; // per-episode variation of scripted verdicts
};

struct LoopConfig {
  double theta = 0.8;       // acceptance threshold on the quality score
  int max_generations = 3;  // image generations before the loop settles
  int t_max = 12;           // policy turn budget
  double kr_trigger = 0.5;  // below this, consult retrieval before refining
};

struct RewardConfig {
  double alpha = 1.0;      // task term weight
  double beta = 0.5;       // reflection term weight
  double gamma = 0.3;      // behavior term weight
  double lambda_kr = 0.2;  // retrieval-usage bonus weight
  double lambda_t = 0.1;   // over-length penalty weight
  double delta = 0.5;      // score gate for the retrieval bonus
  int t_max = 12;          // turn budget the length penalty measures against
};

struct GrpoConfig {
  double epsilon = 0.2;
  double kl_beta = 0.04;
  bool filter_zero_advantage = true;
  double std_floor = 1e-8;
};

struct Config {
  BackendConfig backend;
  SimConfig sim;
  LoopConfig loop;
  RewardConfig rewards;
  GrpoConfig grpo;
};

// Applies one namespaced key; throws Error{ConfigError} on unknown keys or
// unparseable values.
void apply_config_kv(Config& config, const std::string& key,
                     const std::string& value);

// Parses a `key = value` file ('#' comments, blank lines ignored).
void apply_config_file(Config& config, const std::string& path);

// ANOMAGENT_ENDPOINT and ANOMAGENT_API_KEY, when set.
void apply_config_env(Config& config);

// Full merge: defaults -> file (if given) -> environment -> overrides.
Config load_config(const std::optional<std::string>& file_path,
                   const std::map<std::string, std::string>& overrides);

// Resolved configuration for run manifests. The API key never appears; only
// whether one was set.
Json config_to_json(const Config& config);

}  // namespace anomagent
