#include "anomagent/cli.hpp"

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <CLI11.hpp>

#include "anomagent/agent_loop.hpp"
#include "anomagent/config.hpp"
#include "anomagent/error.hpp"
#include "anomagent/grpo.hpp"
#include "anomagent/metrics.hpp"
#include "anomagent/protocol.hpp"
#include "anomagent/rewards.hpp"
#include "anomagent/rng.hpp"
#include "anomagent/tools.hpp"
#include "anomagent/trajectory_builder.hpp"
#include "parallel.hpp"

namespace anomagent::cli {

namespace {

// Options shared by every subcommand. --seed is the single root of all
// randomness: row i of any batch derives its own seed as mix(seed ^ i).
struct CommonOpts {
  std::optional<std::string> config_file;
  std::vector<std::string> set_pairs;  // raw "key=value" overrides
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_file, "configuration file (key = value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", opts.set_pairs,
                  "override one configuration key, e.g. --set loop.theta=0.9")
      ->type_name("KEY=VALUE");
  cmd->add_option("--seed", opts.seed, "base seed; per-row seeds are derived from it");
  cmd->add_option("--jobs", opts.jobs, "worker threads for independent rows")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--out", opts.out, "output path")->required();
}

Config resolve_config(const CommonOpts& opts) {
  std::map<std::string, std::string> overrides;
  for (const std::string& pair : opts.set_pairs) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::ConfigError,
                  "--set expects KEY=VALUE, got '" + pair + "'");
    }
    overrides[pair.substr(0, eq)] = pair.substr(eq + 1);
  }
  return load_config(opts.config_file, overrides);
}

std::uint64_t row_seed(std::uint64_t base, std::size_t i) {
  return rng::mix(base ^ static_cast<std::uint64_t>(i));
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path + "' for reading");
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open '" + path + "' for reading");
  }
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::MalformedJson, "'" + path + "' is not valid JSON");
  }
  return j;
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  }
  out << j.dump(2) << "\n";
}

// Every run leaves exactly one manifest next to its primary output. Only
// relative quantities (durations, counts) appear, so reruns on identical
// inputs differ in timing alone.
class ManifestWriter {
 public:
  ManifestWriter(std::string command, const Config& config)
      : start_(std::chrono::steady_clock::now()) {
    manifest_["command"] = std::move(command);
    manifest_["config"] = config_to_json(config);
    manifest_["seeds"] = Json::array();
    manifest_["inputs"] = Json::array();
    manifest_["outputs"] = Json::array();
    manifest_["counts"] = Json::object();
  }

  void add_seed(std::uint64_t s) { manifest_["seeds"].push_back(s); }
  void add_input(const std::string& p) { manifest_["inputs"].push_back(p); }
  void add_output(const std::string& p) { manifest_["outputs"].push_back(p); }
  void count(const std::string& key, const Json& value) {
    manifest_["counts"][key] = value;
  }

  void write(const std::string& primary_out) {
    const auto elapsed = std::chrono::steady_clock::now() - start_;
    manifest_["timing_seconds"] =
        std::chrono::duration<double>(elapsed).count();
    write_json_file(primary_out + ".manifest.json", manifest_);
  }

 private:
  Json manifest_ = Json::object();
  std::chrono::steady_clock::time_point start_;
};

TaskSpec task_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("item_name") || !j.contains("anomaly_type") ||
      !j.contains("normal_image") || !j["item_name"].is_string() ||
      !j["anomaly_type"].is_string() || !j["normal_image"].is_string()) {
    throw Error(ErrorCode::SchemaViolation,
                "task rows need string fields item_name, anomaly_type, normal_image");
  }
  TaskSpec t;
  t.item_name = j["item_name"].get<std::string>();
  t.anomaly_type = j["anomaly_type"].get<std::string>();
  t.normal_image = j["normal_image"].get<std::string>();
  return t;
}

// Reconstructs the episode-shaped view validate and score need from a bare
// trajectory: the action sequence, the observed quality scores, and whether
// the transcript reached an answer.
EpisodeResult episode_from_trajectory(const Trajectory& t) {
  EpisodeResult e;
  e.trajectory = t;
  for (const Segment& seg : t.segments) {
    if (seg.kind() == SegmentKind::ToolCall) {
      e.action_sequence.push_back(seg.call().name);
    } else if (seg.kind() == SegmentKind::ToolReturn &&
               seg.tool_return().tool == ToolName::QE) {
      const Json& content = seg.tool_return().content;
      if (content.contains("score") && content["score"].is_number()) {
        e.qe_scores.push_back(content["score"].get<double>());
      }
    }
  }
  const bool answered =
      !t.segments.empty() && t.segments.back().kind() == SegmentKind::Answer;
  e.terminated_by = answered ? Termination::Answer : Termination::TurnBudget;
  e.final_score = e.qe_scores.empty() ? 0.0 : e.qe_scores.back();
  return e;
}

// ---------------------------------------------------------------------------
// synthesize: run the agent loop over a task file.

int cmd_synthesize(const CommonOpts& opts, const std::string& tasks_path,
                   const std::string& policy_name, int group,
                   double temperature) {
  const Config config = resolve_config(opts);
  validate_loop_config(config.loop);
  ManifestWriter manifest("synthesize", config);
  manifest.add_input(tasks_path);

  std::vector<TaskSpec> tasks;
  for (const std::string& line : read_lines(tasks_path)) {
    tasks.push_back(task_from_json(Json::parse(line)));
  }

  const BackendFactory factory(config);
  auto make_policy = [&]() -> std::unique_ptr<Policy> {
    if (policy_name == "remote") {
      return std::make_unique<RemotePolicy>(config.backend, temperature);
    }
    return std::make_unique<ScriptedPolicy>();
  };

  std::vector<std::uint64_t> seeds(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    seeds[i] = row_seed(opts.seed, i);
    manifest.add_seed(seeds[i]);
  }

  // One result vector per task; group members stay contiguous and ordered.
  std::vector<std::vector<EpisodeResult>> per_task(tasks.size());
  detail::parallel_for(tasks.size(), opts.jobs, [&](std::size_t i) {
    auto policy = make_policy();
    try {
      if (group > 1) {
        per_task[i] =
            run_group(tasks[i], *policy, factory, config.loop, group, seeds[i]);
      } else {
        auto backend = factory.make(seeds[i]);
        per_task[i] = {run_episode(tasks[i], *policy, *backend, config.loop)};
      }
    } catch (const std::exception& e) {
      EpisodeResult failed;
      failed.trajectory.task = tasks[i];
      failed.trajectory.images = {tasks[i].normal_image};
      failed.terminated_by = Termination::Error;
      failed.error = e.what();
      per_task[i] = {failed};
    }
  });

  std::vector<EpisodeResult> flat;
  int errors = 0;
  for (std::size_t i = 0; i < per_task.size(); ++i) {
    for (std::size_t j = 0; j < per_task[i].size(); ++j) {
      if (per_task[i][j].terminated_by == Termination::Error) {
        ++errors;
        std::cerr << "task " << i << " episode " << j << ": "
                  << per_task[i][j].error << "\n";
      }
      flat.push_back(std::move(per_task[i][j]));
    }
  }
  write_episode_jsonl(opts.out, flat);
  manifest.add_output(opts.out);
  manifest.count("tasks", static_cast<int>(tasks.size()));
  manifest.count("episodes", static_cast<int>(flat.size()));
  manifest.count("errors", errors);
  manifest.write(opts.out);

  std::cout << "synthesize: " << flat.size() << " episode(s) over "
            << tasks.size() << " task(s), " << errors << " error(s) -> "
            << opts.out << "\n";
  return errors == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// build: construct a fine-tuning dataset from build specs.

int cmd_build(const CommonOpts& opts, const std::string& specs_path,
              bool reseed) {
  const Config config = resolve_config(opts);
  ManifestWriter manifest("build", config);
  manifest.add_input(specs_path);

  std::vector<BuildSpec> specs = read_build_specs(specs_path);
  if (reseed) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      specs[i].seed = row_seed(opts.seed, i);
    }
  }
  for (const BuildSpec& s : specs) manifest.add_seed(s.seed);

  const BackendFactory factory(config);
  const DatasetStats stats =
      build_dataset(specs, factory, opts.out, opts.jobs);

  const std::string stats_path = opts.out + ".stats.json";
  write_json_file(stats_path, stats.to_json());
  for (const std::string& msg : stats.failure_messages) {
    std::cerr << msg << "\n";
  }

  manifest.add_output(opts.out);
  manifest.add_output(stats_path);
  manifest.count("specs", static_cast<int>(specs.size()));
  manifest.count("built", stats.total);
  manifest.count("failures", stats.failures);
  manifest.write(opts.out);

  std::cout << "build: " << stats.total << "/" << specs.size()
            << " trajectories (" << stats.singles << " single, " << stats.duals
            << " dual, " << stats.triples << " triple; " << stats.with_kr
            << " with retrieval) -> " << opts.out << "\n";
  return stats.failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// score: itemized rewards for recorded episodes.

int cmd_score(const CommonOpts& opts, const std::string& episodes_path,
              bool use_judge) {
  const Config config = resolve_config(opts);
  ManifestWriter manifest("score", config);
  manifest.add_input(episodes_path);

  const std::vector<std::string> lines = read_lines(episodes_path);
  const TransitionTable table = TransitionTable::default_table();
  const BackendFactory factory(config);

  struct Row {
    std::optional<RewardBreakdown> breakdown;
    std::string error;
  };
  std::vector<Row> rows(lines.size());
  detail::parallel_for(lines.size(), opts.jobs, [&](std::size_t i) {
    try {
      const EpisodeResult e = EpisodeResult::from_json(Json::parse(lines[i]));
      std::unique_ptr<ToolBackend> judge;
      if (use_judge) judge = factory.make(row_seed(opts.seed, i));
      rows[i].breakdown =
          total_reward(e, config.rewards, table, judge.get());
    } catch (const std::exception& e) {
      rows[i].error = e.what();
    }
  });

  std::vector<RewardBreakdown> scored;
  int failures = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].breakdown) {
      scored.push_back(*rows[i].breakdown);
    } else {
      ++failures;
      std::cerr << "row " << i << ": " << rows[i].error << "\n";
    }
  }
  write_breakdown_jsonl(opts.out, scored);

  manifest.add_seed(opts.seed);
  manifest.add_output(opts.out);
  manifest.count("rows", static_cast<int>(lines.size()));
  manifest.count("scored", static_cast<int>(scored.size()));
  manifest.count("failures", failures);
  manifest.write(opts.out);

  std::cout << "score: " << scored.size() << "/" << lines.size()
            << " row(s) -> " << opts.out << "\n";
  return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// advantages: group-normalized advantages, plus the full loss when the input
// carries per-token log-probabilities.

GroupRollout rollout_from_json(const Json& j) {
  GroupRollout group;
  if (!j.contains("rewards") || !j["rewards"].is_array()) {
    throw Error(ErrorCode::ShapeMismatch,
                "group object needs a numeric 'rewards' array");
  }
  for (const Json& r : j["rewards"]) {
    if (!r.is_number()) {
      throw Error(ErrorCode::ShapeMismatch, "rewards must be numbers");
    }
    group.rewards.push_back(r.get<double>());
  }
  auto matrix = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return false;
    if (!j[key].is_array()) {
      throw Error(ErrorCode::ShapeMismatch,
                  std::string("'") + key + "' must be an array of arrays");
    }
    for (const Json& row : j[key]) {
      if (!row.is_array()) {
        throw Error(ErrorCode::ShapeMismatch,
                    std::string("'") + key + "' must be an array of arrays");
      }
      dst.emplace_back();
      for (const Json& v : row) {
        if (!v.is_number()) {
          throw Error(ErrorCode::ShapeMismatch,
                      std::string("'") + key + "' entries must be numbers");
        }
        dst.back().push_back(
            static_cast<typename std::decay_t<decltype(dst.back())>::value_type>(
                v.get<double>()));
      }
    }
    return true;
  };
  const bool has_new = matrix("token_logprobs_new", group.token_logprobs_new);
  const bool has_old = matrix("token_logprobs_old", group.token_logprobs_old);
  const bool has_ref = matrix("token_logprobs_ref", group.token_logprobs_ref);
  const bool has_mask = matrix("supervision_mask", group.supervision_mask);
  if (has_new != has_old || has_new != has_ref || has_new != has_mask) {
    throw Error(ErrorCode::ShapeMismatch,
                "token arrays must be given all together or not at all");
  }
  return group;
}

int cmd_advantages(const CommonOpts& opts, const std::string& in_path) {
  const Config config = resolve_config(opts);
  ManifestWriter manifest("advantages", config);
  manifest.add_input(in_path);

  // Two accepted inputs: a single JSON object describing one rollout group,
  // or reward-breakdown JSONL whose per-row totals form the group.
  const std::vector<std::string> lines = read_lines(in_path);
  GroupRollout group;
  bool has_tokens = false;
  Json first =
      lines.empty() ? Json::object() : Json::parse(lines[0], nullptr, false);
  if (lines.size() == 1 && !first.is_discarded() && first.is_object() &&
      first.contains("rewards")) {
    group = rollout_from_json(first);
    has_tokens = !group.token_logprobs_new.empty();
  } else {
    for (const std::string& line : lines) {
      group.rewards.push_back(
          RewardBreakdown::from_json(Json::parse(line)).total);
    }
  }

  Json result = Json::object();
  if (has_tokens) {
    const GrpoResult r = grpo_loss(group, config.grpo);
    result["advantages"] = r.advantages;
    result["loss"] = r.loss;
    result["empty_after_filter"] = r.empty_after_filter;
    result["clip_fraction"] = r.clip_fraction;
    result["mean_kl"] = r.mean_kl;
    result["kept"] = r.kept;
    result["supervised_tokens"] = r.supervised_tokens;
  } else {
    result["advantages"] = group_advantages(group.rewards, config.grpo);
  }
  write_json_file(opts.out, result);

  manifest.add_output(opts.out);
  manifest.count("group_size", static_cast<int>(group.rewards.size()));
  manifest.write(opts.out);

  std::cout << "advantages: group of " << group.rewards.size() << " -> "
            << opts.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// validate: structural report over a trajectory file.

int cmd_validate(const CommonOpts& opts, const std::string& traj_path) {
  const Config config = resolve_config(opts);
  ManifestWriter manifest("validate", config);
  manifest.add_input(traj_path);

  const std::vector<std::string> lines = read_lines(traj_path);
  const TransitionTable table = TransitionTable::default_table();

  Json report_rows = Json::array();
  int valid = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    Json row = Json::object();
    row["row"] = i;
    try {
      // Accept bare trajectory rows (build output) and episode rows
      // (synthesize output), which carry the trajectory one level down.
      Json parsed = Json::parse(lines[i]);
      if (parsed.is_object() && parsed.contains("trajectory")) {
        parsed = parsed["trajectory"];
      }
      const Trajectory t = trajectory_from_json(parsed);
      const bool ok = check_format(t);
      row["format_valid"] = ok;
      const auto cls = classify_taxonomy(t);
      row["taxonomy"] = cls ? Json(taxonomy_name(*cls)) : Json(nullptr);
      const EpisodeResult e = episode_from_trajectory(t);
      const BehaviorRewardResult b =
          behavior_reward(e, config.rewards, table);
      row["transition_penalty"] = b.terms.transition_penalty;
      if (ok) {
        ++valid;
      } else {
        row["reason"] = "transcript structure check failed";
        std::cerr << "row " << i << ": transcript structure check failed\n";
      }
    } catch (const std::exception& e) {
      row["format_valid"] = false;
      row["taxonomy"] = nullptr;
      row["reason"] = e.what();
      std::cerr << "row " << i << ": " << e.what() << "\n";
    }
    report_rows.push_back(std::move(row));
  }

  Json report = Json::object();
  report["total"] = static_cast<int>(lines.size());
  report["valid"] = valid;
  report["invalid"] = static_cast<int>(lines.size()) - valid;
  report["rows"] = std::move(report_rows);
  write_json_file(opts.out, report);

  manifest.add_output(opts.out);
  manifest.count("total", static_cast<int>(lines.size()));
  manifest.count("valid", valid);
  manifest.write(opts.out);

  std::cout << "validate: " << valid << "/" << lines.size()
            << " row(s) valid -> " << opts.out << "\n";
  return valid == static_cast<int>(lines.size()) ? 0 : 1;
}

// ---------------------------------------------------------------------------
// metrics: aggregate generation-quality formulas over prepared inputs.

int cmd_metrics(const CommonOpts& opts, const std::string& probs_path,
                const std::string& clusters_path) {
  const Config config = resolve_config(opts);
  if (probs_path.empty() && clusters_path.empty()) {
    throw Error(ErrorCode::ConfigError,
                "metrics needs --probs and/or --clusters");
  }
  ManifestWriter manifest("metrics", config);

  Json result = Json::object();
  if (!probs_path.empty()) {
    manifest.add_input(probs_path);
    const ProbMatrix p = prob_matrix_from_json(read_json_file(probs_path));
    result["inception_score"] = inception_score(p);
    manifest.count("prob_rows", static_cast<int>(p.size()));
  }
  if (!clusters_path.empty()) {
    manifest.add_input(clusters_path);
    const auto clusters = clusters_from_json(read_json_file(clusters_path));
    result["icl"] = icl(clusters);
    manifest.count("clusters", static_cast<int>(clusters.size()));
  }
  write_json_file(opts.out, result);
  manifest.add_output(opts.out);
  manifest.write(opts.out);

  std::cout << "metrics: " << result.dump() << " -> " << opts.out << "\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Agent-driven anomaly synthesis toolkit"};
  app.require_subcommand(1);

  CommonOpts synth_opts, build_opts, score_opts, adv_opts, val_opts, met_opts;

  std::string tasks_path, policy_name = "scripted";
  int group = 1;
  double temperature = 0.7;
  CLI::App* synth = app.add_subcommand(
      "synthesize", "run the agent loop over a task file (JSONL)");
  add_common(synth, synth_opts);
  synth->add_option("--tasks", tasks_path, "task file, one JSON object per line")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--policy", policy_name, "turn source")
      ->check(CLI::IsMember({"scripted", "remote"}));
  synth->add_option("--group", group, "episodes per task")
      ->check(CLI::PositiveNumber);
  synth->add_option("--temperature", temperature, "sampling temperature (remote policy)");

  std::string specs_path;
  CLI::App* build = app.add_subcommand(
      "build", "construct fine-tuning trajectories from build specs (JSONL)");
  add_common(build, build_opts);
  build->add_option("--specs", specs_path, "build-spec file, one JSON object per line")
      ->required()
      ->check(CLI::ExistingFile);
  CLI::Option* reseed_opt = build->add_flag(
      "--reseed", "replace per-spec seeds with ones derived from --seed");

  std::string episodes_path;
  bool use_judge = false;
  CLI::App* score = app.add_subcommand(
      "score", "itemized rewards for recorded episodes (JSONL)");
  add_common(score, score_opts);
  score->add_option("--episodes", episodes_path, "episode file from synthesize")
      ->required()
      ->check(CLI::ExistingFile);
  score->add_flag("--judge", use_judge,
                  "re-judge final images through the backend instead of "
                  "reusing recorded scores");

  std::string adv_in;
  CLI::App* adv = app.add_subcommand(
      "advantages", "group-normalized advantages (and loss, given token data)");
  add_common(adv, adv_opts);
  adv->add_option("--in", adv_in,
                  "reward JSONL from score, or one JSON rollout-group object")
      ->required()
      ->check(CLI::ExistingFile);

  std::string traj_path;
  CLI::App* val = app.add_subcommand(
      "validate", "structural report over a trajectory file (JSONL)");
  add_common(val, val_opts);
  val->add_option("--trajectories", traj_path,
                  "trajectory or episode file (build or synthesize output)")
      ->required()
      ->check(CLI::ExistingFile);

  std::string probs_path, clusters_path;
  CLI::App* met = app.add_subcommand(
      "metrics", "aggregate quality metrics over prepared inputs");
  add_common(met, met_opts);
  met->add_option("--probs", probs_path, "class-probability matrix JSON")
      ->check(CLI::ExistingFile);
  met->add_option("--clusters", clusters_path, "cluster pairwise-distance JSON")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; any misuse exits 2
  }

  try {
    if (synth->parsed()) {
      return cmd_synthesize(synth_opts, tasks_path, policy_name, group,
                            temperature);
    }
    if (build->parsed()) {
      return cmd_build(build_opts, specs_path, reseed_opt->count() > 0);
    }
    if (score->parsed()) {
      return cmd_score(score_opts, episodes_path, use_judge);
    }
    if (adv->parsed()) {
      return cmd_advantages(adv_opts, adv_in);
    }
    if (val->parsed()) {
      return cmd_validate(val_opts, traj_path);
    }
    if (met->parsed()) {
      return cmd_metrics(met_opts, probs_path, clusters_path);
    }
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";  // what() carries the code name
    return (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::IoError)
               ? 2
               : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace anomagent::cli
