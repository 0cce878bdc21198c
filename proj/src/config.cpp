#include "anomagent/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "anomagent/error.hpp"

namespace anomagent {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t consumed = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &consumed);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": not a number: " + value);
  }
  if (consumed != value.size()) {
    throw Error(ErrorCode::ConfigError, key + ": not a number: " + value);
  }
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  std::size_t consumed = 0;
  std::int64_t out = 0;
  try {
    out = std::stoll(value, &consumed);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError, key + ": not an integer: " + value);
  }
  if (consumed != value.size()) {
    throw Error(ErrorCode::ConfigError, key + ": not an integer: " + value);
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::size_t consumed = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(value, &consumed);
  } catch (const std::exception&) {
    throw Error(ErrorCode::ConfigError,
                key + ": not a nonnegative integer: " + value);
  }
  if (consumed != value.size() || (!value.empty() && value[0] == '-')) {
    throw Error(ErrorCode::ConfigError,
                key + ": not a nonnegative integer: " + value);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw Error(ErrorCode::ConfigError, key + ": not a boolean: " + value);
}

}  // namespace

void apply_config_kv(Config& c, const std::string& key,
                     const std::string& value) {
  using Setter = std::function<void(Config&, const std::string&)>;
  // One entry per recognized key; anything else is a configuration error so
  // typos fail loudly instead of silently keeping a default.
  static const std::map<std::string, Setter> setters = {
      {"backend.kind",
       [](Config& c, const std::string& v) {
         if (v != "sim" && v != "remote") {
           throw Error(ErrorCode::ConfigError,
                       "backend.kind must be sim or remote, got " + v);
         }
         c.backend.kind = v;
       }},
      {"backend.endpoint",
       [](Config& c, const std::string& v) { c.backend.endpoint = v; }},
      {"backend.api_key",
       [](Config& c, const std::string& v) { c.backend.api_key = v; }},
      {"backend.model",
       [](Config& c, const std::string& v) { c.backend.model = v; }},
      {"backend.max_retries",
       [](Config& c, const std::string& v) {
         c.backend.max_retries =
             static_cast<int>(parse_int("backend.max_retries", v));
       }},
      {"backend.backoff_initial_seconds",
       [](Config& c, const std::string& v) {
         c.backend.backoff_initial_seconds =
             parse_double("backend.backoff_initial_seconds", v);
       }},
      {"sim.seed",
       [](Config& c, const std::string& v) {
         c.sim.seed = parse_uint("sim.seed", v);
       }},
      {"sim.script", [](Config& c, const std::string& v) { c.sim.script = v; }},
      {"sim.seed_jitter",
       [](Config& c, const std::string& v) {
         c.sim.seed_jitter = parse_bool("sim.seed_jitter", v);
       }},
      {"loop.theta",
       [](Config& c, const std::string& v) {
         c.loop.theta = parse_double("loop.theta", v);
       }},
      {"loop.max_generations",
       [](Config& c, const std::string& v) {
         c.loop.max_generations =
             static_cast<int>(parse_int("loop.max_generations", v));
       }},
      {"loop.t_max",
       [](Config& c, const std::string& v) {
         c.loop.t_max = static_cast<int>(parse_int("loop.t_max", v));
       }},
      {"loop.kr_trigger",
       [](Config& c, const std::string& v) {
         c.loop.kr_trigger = parse_double("loop.kr_trigger", v);
       }},
      {"rewards.alpha",
       [](Config& c, const std::string& v) {
         c.rewards.alpha = parse_double("rewards.alpha", v);
       }},
      {"rewards.beta",
       [](Config& c, const std::string& v) {
         c.rewards.beta = parse_double("rewards.beta", v);
       }},
      {"rewards.gamma",
       [](Config& c, const std::string& v) {
         c.rewards.gamma = parse_double("rewards.gamma", v);
       }},
      {"rewards.lambda_kr",
       [](Config& c, const std::string& v) {
         c.rewards.lambda_kr = parse_double("rewards.lambda_kr", v);
       }},
      {"rewards.lambda_t",
       [](Config& c, const std::string& v) {
         c.rewards.lambda_t = parse_double("rewards.lambda_t", v);
       }},
      {"rewards.delta",
       [](Config& c, const std::string& v) {
         c.rewards.delta = parse_double("rewards.delta", v);
       }},
      {"rewards.t_max",
       [](Config& c, const std::string& v) {
         c.rewards.t_max = static_cast<int>(parse_int("rewards.t_max", v));
       }},
      {"grpo.epsilon",
       [](Config& c, const std::string& v) {
         c.grpo.epsilon = parse_double("grpo.epsilon", v);
       }},
      {"grpo.kl_beta",
       [](Config& c, const std::string& v) {
         c.grpo.kl_beta = parse_double("grpo.kl_beta", v);
       }},
      {"grpo.filter_zero_advantage",
       [](Config& c, const std::string& v) {
         c.grpo.filter_zero_advantage =
             parse_bool("grpo.filter_zero_advantage", v);
       }},
      {"grpo.std_floor",
       [](Config& c, const std::string& v) {
         c.grpo.std_floor = parse_double("grpo.std_floor", v);
       }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) {
    throw Error(ErrorCode::ConfigError, "unknown config key: " + key);
  }
  it->second(c, value);
}

void apply_config_file(Config& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::ConfigError, "cannot open config file: " + path);
  }
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << path << ":" << line_no << ": expected key = value";
      throw Error(ErrorCode::ConfigError, msg.str());
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      std::ostringstream msg;
      msg << path << ":" << line_no << ": empty key";
      throw Error(ErrorCode::ConfigError, msg.str());
    }
    apply_config_kv(config, key, value);
  }
}

void apply_config_env(Config& config) {
  if (const char* endpoint = std::getenv("ANOMAGENT_ENDPOINT")) {
    config.backend.endpoint = endpoint;
  }
  if (const char* key = std::getenv("ANOMAGENT_API_KEY")) {
    config.backend.api_key = key;
  }
}

Config load_config(const std::optional<std::string>& file_path,
                   const std::map<std::string, std::string>& overrides) {
  Config config;
  if (file_path) apply_config_file(config, *file_path);
  apply_config_env(config);
  for (const auto& [key, value] : overrides) {
    apply_config_kv(config, key, value);
  }
  return config;
}

Json config_to_json(const Config& c) {
  Json j;
  j["backend"] = {{"kind", c.backend.kind},
                  {"endpoint", c.backend.endpoint},
                  {"api_key_set", !c.backend.api_key.empty()},
                  {"model", c.backend.model},
                  {"max_retries", c.backend.max_retries},
                  {"backoff_initial_seconds", c.backend.backoff_initial_seconds}};
  j["sim"] = {{"seed", c.sim.seed},
              {"script", c.sim.script},
              {"seed_jitter", c.sim.seed_jitter}};
  j["loop"] = {{"theta", c.loop.theta},
               {"max_generations", c.loop.max_generations},
               {"t_max", c.loop.t_max},
               {"kr_trigger", c.loop.kr_trigger}};
  j["rewards"] = {{"alpha", c.rewards.alpha},
                  {"beta", c.rewards.beta},
                  {"gamma", c.rewards.gamma},
                  {"lambda_kr", c.rewards.lambda_kr},
                  {"lambda_t", c.rewards.lambda_t},
                  {"delta", c.rewards.delta},
                  {"t_max", c.rewards.t_max}};
  j["grpo"] = {{"epsilon", c.grpo.epsilon},
               {"kl_beta", c.grpo.kl_beta},
               {"filter_zero_advantage", c.grpo.filter_zero_advantage},
               {"std_floor", c.grpo.std_floor}};
  return j;
}

}  // namespace anomagent
