#include <algorithm>
#include <cmath>
#include <fstream>

#include "anomagent/error.hpp"
#include "anomagent/rng.hpp"
#include "anomagent/tools.hpp"

namespace anomagent {

Json QualityVerdict::to_content() const {
  Json j = Json::object();
  j["location_score"] = location_score;
  j["quality_score"] = quality_score;
  j["review"] = review;
  j["score"] = score();
  return j;
}

QualityVerdict QualityVerdict::from_content(const Json& content) {
  if (!content.is_object() || !content.contains("location_score") ||
      !content.contains("quality_score") || !content.contains("review")) {
    throw Error(ErrorCode::BadResponse,
                "verdict must carry location_score/quality_score/review");
  }
  const Json& l = content["location_score"];
  const Json& q = content["quality_score"];
  if (!l.is_number_integer() || !q.is_number_integer() ||
      !content["review"].is_string()) {
    throw Error(ErrorCode::BadResponse, "verdict fields have wrong types");
  }
  QualityVerdict v;
  v.location_score = l.get<int>();
  v.quality_score = q.get<int>();
  v.review = content["review"].get<std::string>();
  if (v.location_score < 0 || v.location_score > 5 || v.quality_score < 0 ||
      v.quality_score > 5) {
    throw Error(ErrorCode::BadResponse, "verdict sub-scores outside 0..5");
  }
  if (content.contains("score")) {
    if (!content["score"].is_number() ||
        std::abs(content["score"].get<double>() - v.score()) > 1e-9) {
      throw Error(ErrorCode::BadResponse,
                  "verdict scalar score inconsistent with sub-scores");
    }
  }
  return v;
}

SimScript SimScript::default_script() {
  SimScript s;
  s.qe_score_sequence = {{4, 4, "Placement and blending look plausible."}};
  s.pg_prompt_template =
      "Add a realistic {anomaly_type} to the {item_name}, keeping background, "
      "pose and lighting unchanged.";
  return s;
}

SimScript SimScript::from_json(const Json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigError, "sim script must be a JSON object");
  }
  SimScript s = default_script();
  if (j.contains("pg_prompt_template")) {
    if (!j["pg_prompt_template"].is_string()) {
      throw Error(ErrorCode::ConfigError, "pg_prompt_template must be a string");
    }
    s.pg_prompt_template = j["pg_prompt_template"].get<std::string>();
  }
  if (j.contains("qe_score_sequence")) {
    if (!j["qe_score_sequence"].is_array() || j["qe_score_sequence"].empty()) {
      throw Error(ErrorCode::ConfigError,
                  "qe_score_sequence must be a non-empty array");
    }
    s.qe_score_sequence.clear();
    for (const auto& row : j["qe_score_sequence"]) {
      try {
        s.qe_score_sequence.push_back(QualityVerdict::from_content(row));
      } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError,
                    std::string("bad qe_score_sequence entry: ") + e.what());
      }
    }
  }
  if (j.contains("kr_knowledge_table")) {
    if (!j["kr_knowledge_table"].is_object()) {
      throw Error(ErrorCode::ConfigError, "kr_knowledge_table must be an object");
    }
    for (auto it = j["kr_knowledge_table"].begin();
         it != j["kr_knowledge_table"].end(); ++it) {
      if (!it.value().is_object()) {
        throw Error(ErrorCode::ConfigError,
                    "kr_knowledge_table entries must map anomaly types to text");
      }
      for (auto inner = it.value().begin(); inner != it.value().end(); ++inner) {
        if (!inner.value().is_string()) {
          throw Error(ErrorCode::ConfigError, "knowledge entries must be strings");
        }
        s.kr_knowledge_table[it.key()][inner.key()] =
            inner.value().get<std::string>();
      }
    }
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "pg_prompt_template" && it.key() != "qe_score_sequence" &&
        it.key() != "kr_knowledge_table") {
      throw Error(ErrorCode::ConfigError, "unknown sim script key: " + it.key());
    }
  }
  return s;
}

Json SimScript::to_json() const {
  Json j = Json::object();
  Json seq = Json::array();
  for (const auto& v : qe_score_sequence) seq.push_back(v.to_content());
  j["qe_score_sequence"] = seq;
  j["pg_prompt_template"] = pg_prompt_template;
  Json table = Json::object();
  for (const auto& [item, inner] : kr_knowledge_table) {
    Json row = Json::object();
    for (const auto& [anomaly, text] : inner) row[anomaly] = text;
    table[item] = row;
  }
  j["kr_knowledge_table"] = table;
  return j;
}

SimScript load_sim_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::ConfigError, "cannot open sim script: " + path);
  }
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) {
    throw Error(ErrorCode::ConfigError, "sim script is not valid JSON: " + path);
  }
  return SimScript::from_json(j);
}

namespace {

std::string fill_slots(std::string text, const std::string& item,
                       const std::string& anomaly) {
  const auto replace_all = [&](const std::string& slot, const std::string& value) {
    std::size_t pos = 0;
    while ((pos = text.find(slot, pos)) != std::string::npos) {
      text.replace(pos, slot.size(), value);
      pos += value.size();
    }
  };
  replace_all("{item_name}", item);
  replace_all("{anomaly_type}", anomaly);
  return text;
}

// The jitter stream is a pure function of (seed, ordinal, lane) so reruns
// reproduce byte-for-byte.
int jitter_delta(std::uint64_t seed, int ordinal, int lane) {
  const std::uint64_t h =
      rng::mix(seed ^ rng::mix(static_cast<std::uint64_t>(ordinal) * 2 +
                               static_cast<std::uint64_t>(lane)));
  return static_cast<int>(h % 3) - 1;  // -1, 0, or +1
}

std::int64_t require_image(const Json& args, const char* field,
                           const Trajectory& ctx) {
  const std::int64_t index = args.at(field).get<std::int64_t>();
  if (!ctx.has_image(index)) {
    throw Error(ErrorCode::DanglingImage,
                std::string(field) + " " + std::to_string(index) +
                    " is not in the image registry (count " +
                    std::to_string(ctx.image_count()) + ")");
  }
  return index;
}

}  // namespace

SimulatedBackend::SimulatedBackend(std::uint64_t seed, SimScript script,
                                   bool seed_jitter)
    : seed_(seed), script_(std::move(script)), seed_jitter_(seed_jitter) {
  if (script_.qe_score_sequence.empty()) {
    throw Error(ErrorCode::ConfigError, "sim script has no QE verdicts");
  }
}

QualityVerdict SimulatedBackend::next_verdict() {
  const int ordinal = qe_calls_++;
  const std::size_t slot = std::min(static_cast<std::size_t>(ordinal),
                                    script_.qe_score_sequence.size() - 1);
  QualityVerdict v = script_.qe_score_sequence[slot];
  if (seed_jitter_) {
    v.location_score =
        std::clamp(v.location_score + jitter_delta(seed_, ordinal, 0), 0, 5);
    v.quality_score =
        std::clamp(v.quality_score + jitter_delta(seed_, ordinal, 1), 0, 5);
  }
  return v;
}

Observation SimulatedBackend::invoke(ToolName tool, const Json& args,
                                     const Trajectory& ctx) {
  validate_tool_arguments(tool, args);
  Observation obs;
  obs.payload.tool = tool;
  switch (tool) {
    case ToolName::PG: {
      require_image(args, "image", ctx);
      Json content = Json::object();
      content["prompt"] =
          fill_slots(script_.pg_prompt_template,
                     args.at("item_name").get<std::string>(),
                     args.at("anomaly_type").get<std::string>());
      obs.payload.content = std::move(content);
      break;
    }
    case ToolName::IG: {
      require_image(args, "target_image", ctx);
      const std::int64_t new_index = ctx.image_count() + 1;
      Json content = Json::object();
      content["new_image_index"] = new_index;
      obs.payload.content = std::move(content);
      obs.new_image = "synth_" + std::to_string(new_index) + "_of_" +
                      (ctx.images.empty() ? std::string("unknown") : ctx.images.front());
      break;
    }
    case ToolName::QE: {
      require_image(args, "anomaly_image", ctx);
      obs.payload.content = next_verdict().to_content();
      break;
    }
    case ToolName::KR: {
      const std::string item = args.at("item_name").get<std::string>();
      const std::string anomaly = args.at("anomaly_type").get<std::string>();
      std::string knowledge;
      const auto row = script_.kr_knowledge_table.find(item);
      if (row != script_.kr_knowledge_table.end()) {
        const auto cell = row->second.find(anomaly);
        if (cell != row->second.end()) knowledge = cell->second;
      }
      if (knowledge.empty()) {
        knowledge = "No curated guidance for " + anomaly + " on " + item +
                    "; rely on the evaluation review.";
      }
      Json content = Json::object();
      content["knowledge"] = std::move(knowledge);
      obs.payload.content = std::move(content);
      break;
    }
    case ToolName::MG: {
      const std::int64_t index = require_image(args, "anomaly_image", ctx);
      Json content = Json::object();
      content["mask_reference"] =
          "mask_of_" + ctx.images[static_cast<std::size_t>(index - 1)];
      obs.payload.content = std::move(content);
      break;
    }
  }
  validate_observation(tool, obs.payload.content);
  return obs;
}

std::string SimulatedBackend::reverse_normalize(const std::string& anomaly_image) {
  return "normal_of_" + anomaly_image;
}

BackendFactory::BackendFactory(const Config& config) : config_(config) {
  script_ = config.sim.script.empty() ? SimScript::default_script()
                                      : load_sim_script(config.sim.script);
}

std::unique_ptr<ToolBackend> BackendFactory::make(std::uint64_t seed) const {
  if (config_.backend.kind == "remote") {
    return std::make_unique<RemoteBackend>(config_.backend);
  }
  return std::make_unique<SimulatedBackend>(seed, script_,
                                            config_.sim.seed_jitter);
}

}  // namespace anomagent
