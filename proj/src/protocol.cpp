#include "anomagent/protocol.hpp"

#include <array>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace anomagent {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnclosedTag: return "UnclosedTag";
    case ErrorCode::MalformedJson: return "MalformedJson";
    case ErrorCode::UnknownTool: return "UnknownTool";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::StrayText: return "StrayText";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::BadResponse: return "BadResponse";
    case ErrorCode::DanglingImage: return "DanglingImage";
    case ErrorCode::GroupTooSmall: return "GroupTooSmall";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DegenerateRow: return "DegenerateRow";
    case ErrorCode::NoEligibleCluster: return "NoEligibleCluster";
    case ErrorCode::PolicyError: return "PolicyError";
    case ErrorCode::NoGeneration: return "NoGeneration";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

const char* tool_wire_name(ToolName tool) {
  switch (tool) {
    case ToolName::PG: return "prompt_gen";
    case ToolName::IG: return "image_gen";
    case ToolName::QE: return "quality_eval";
    case ToolName::KR: return "knowledge_retrieval";
    case ToolName::MG: return "mask_gen";
  }
  return "";
}

std::optional<ToolName> tool_from_wire_name(const std::string& name) {
  for (ToolName t : all_tools()) {
    if (name == tool_wire_name(t)) return t;
  }
  return std::nullopt;
}

std::vector<ToolName> all_tools() {
  return {ToolName::PG, ToolName::IG, ToolName::QE, ToolName::KR, ToolName::MG};
}

namespace {

enum class FieldType { PositiveInt, Text, Bool, Score05, UnitReal };

struct FieldSpec {
  const char* name;
  FieldType type;
};

bool field_ok(const Json& v, FieldType type) {
  switch (type) {
    case FieldType::PositiveInt:
      return v.is_number_integer() && v.get<std::int64_t>() >= 1;
    case FieldType::Text:
      return v.is_string();
    case FieldType::Bool:
      return v.is_boolean();
    case FieldType::Score05:
      return v.is_number_integer() && v.get<std::int64_t>() >= 0 &&
             v.get<std::int64_t>() <= 5;
    case FieldType::UnitReal:
      return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0;
  }
  return false;
}

const char* field_type_name(FieldType type) {
  switch (type) {
    case FieldType::PositiveInt: return "positive integer";
    case FieldType::Text: return "string";
    case FieldType::Bool: return "boolean";
    case FieldType::Score05: return "integer in [0,5]";
    case FieldType::UnitReal: return "real in [0,1]";
  }
  return "";
}

// Strict object check: required fields, correct types, nothing extra.
void check_fields(const std::string& where, const Json& obj,
                  const std::vector<FieldSpec>& fields) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::SchemaViolation, where + " payload is not a JSON object");
  }
  for (const auto& f : fields) {
    auto it = obj.find(f.name);
    if (it == obj.end()) {
      throw Error(ErrorCode::SchemaViolation,
                  where + " missing field '" + f.name + "'");
    }
    if (!field_ok(*it, f.type)) {
      throw Error(ErrorCode::SchemaViolation, where + " field '" + f.name +
                                                  "' is not a " +
                                                  field_type_name(f.type));
    }
  }
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const auto& f : fields) {
      if (it.key() == f.name) { known = true; break; }
    }
    if (!known) {
      throw Error(ErrorCode::SchemaViolation,
                  where + " has unknown field '" + it.key() + "'");
    }
  }
}

const std::vector<FieldSpec>& argument_fields(ToolName tool) {
  static const std::vector<FieldSpec> pg = {{"image", FieldType::PositiveInt},
                                            {"item_name", FieldType::Text},
                                            {"anomaly_type", FieldType::Text}};
  static const std::vector<FieldSpec> ig = {{"prompt", FieldType::Text},
                                            {"target_image", FieldType::PositiveInt}};
  static const std::vector<FieldSpec> qe = {{"anomaly_image", FieldType::PositiveInt},
                                            {"item_name", FieldType::Text},
                                            {"anomaly_type", FieldType::Text}};
  static const std::vector<FieldSpec> kr = {{"item_name", FieldType::Text},
                                            {"anomaly_type", FieldType::Text}};
  static const std::vector<FieldSpec> mg = {{"anomaly_image", FieldType::PositiveInt}};
  switch (tool) {
    case ToolName::PG: return pg;
    case ToolName::IG: return ig;
    case ToolName::QE: return qe;
    case ToolName::KR: return kr;
    case ToolName::MG: return mg;
  }
  return pg;
}

const std::vector<FieldSpec>& observation_fields(ToolName tool) {
  static const std::vector<FieldSpec> pg = {{"prompt", FieldType::Text}};
  static const std::vector<FieldSpec> ig = {{"new_image_index", FieldType::PositiveInt}};
  static const std::vector<FieldSpec> qe = {{"location_score", FieldType::Score05},
                                            {"quality_score", FieldType::Score05},
                                            {"review", FieldType::Text},
                                            {"score", FieldType::UnitReal}};
  static const std::vector<FieldSpec> kr = {{"knowledge", FieldType::Text}};
  static const std::vector<FieldSpec> mg = {{"mask_reference", FieldType::Text}};
  switch (tool) {
    case ToolName::PG: return pg;
    case ToolName::IG: return ig;
    case ToolName::QE: return qe;
    case ToolName::KR: return kr;
    case ToolName::MG: return mg;
  }
  return pg;
}

}  // namespace

void validate_tool_arguments(ToolName tool, const Json& arguments) {
  check_fields(std::string(tool_wire_name(tool)) + " arguments", arguments,
               argument_fields(tool));
}

void validate_observation(ToolName tool, const Json& content) {
  check_fields(std::string(tool_wire_name(tool)) + " observation", content,
               observation_fields(tool));
}

namespace {

struct TagDef {
  SegmentKind kind;
  const char* open;
  const char* close;
};

constexpr std::array<TagDef, 4> kTags = {{
    {SegmentKind::Thinking, "<thinking>", "</thinking>"},
    {SegmentKind::ToolCall, "<tool_call>", "</tool_call>"},
    {SegmentKind::ToolReturn, "<tool_return>", "</tool_return>"},
    {SegmentKind::Answer, "<answer>", "</answer>"},
}};

Json parse_json_body(const std::string& body, const char* tag) {
  Json parsed = Json::parse(body, nullptr, false);
  if (parsed.is_discarded()) {
    throw Error(ErrorCode::MalformedJson,
                std::string("body of ") + tag + " is not valid JSON");
  }
  return parsed;
}

ToolName require_known_tool(const Json& name_value, const char* where) {
  if (!name_value.is_string()) {
    throw Error(ErrorCode::SchemaViolation,
                std::string(where) + " tool name is not a string");
  }
  auto tool = tool_from_wire_name(name_value.get<std::string>());
  if (!tool) {
    throw Error(ErrorCode::UnknownTool,
                "'" + name_value.get<std::string>() + "' is not a registered tool");
  }
  return *tool;
}

Segment make_tool_call(const std::string& body) {
  Json parsed = parse_json_body(body, "<tool_call>");
  if (!parsed.is_object() || !parsed.contains("name") || !parsed.contains("arguments")) {
    throw Error(ErrorCode::SchemaViolation,
                "<tool_call> body must be {\"name\": ..., \"arguments\": ...}");
  }
  if (parsed.size() != 2) {
    throw Error(ErrorCode::SchemaViolation, "<tool_call> body has extra fields");
  }
  ToolName tool = require_known_tool(parsed["name"], "<tool_call>");
  validate_tool_arguments(tool, parsed["arguments"]);
  return Segment::call_of(tool, parsed["arguments"]);
}

Segment make_tool_return(const std::string& body) {
  Json parsed = parse_json_body(body, "<tool_return>");
  if (!parsed.is_object() || !parsed.contains("tool") || !parsed.contains("content")) {
    throw Error(ErrorCode::SchemaViolation,
                "<tool_return> body must be {\"tool\": ..., \"content\": ...}");
  }
  if (parsed.size() != 2) {
    throw Error(ErrorCode::SchemaViolation, "<tool_return> body has extra fields");
  }
  ToolName tool = require_known_tool(parsed["tool"], "<tool_return>");
  validate_observation(tool, parsed["content"]);
  return Segment::return_of(tool, parsed["content"]);
}

Segment make_answer(const std::string& body) {
  Json parsed = parse_json_body(body, "<answer>");
  check_fields("<answer>", parsed,
               {{"status", FieldType::Text},
                {"final_image_index", FieldType::PositiveInt},
                {"mask_generated", FieldType::Bool},
                {"synthesis_logic", FieldType::Text}});
  AnswerPayload a;
  a.status = parsed["status"].get<std::string>();
  a.final_image_index = parsed["final_image_index"].get<std::int64_t>();
  a.mask_generated = parsed["mask_generated"].get<bool>();
  a.synthesis_logic = parsed["synthesis_logic"].get<std::string>();
  return Segment::answer_of(std::move(a));
}

}  // namespace

std::vector<Segment> parse_transcript(const std::string& raw) {
  std::vector<Segment> segments;
  std::size_t pos = 0;
  const std::size_t n = raw.size();
  while (pos < n) {
    if (std::isspace(static_cast<unsigned char>(raw[pos]))) {
      ++pos;
      continue;
    }
    const TagDef* tag = nullptr;
    for (const auto& t : kTags) {
      if (raw.compare(pos, std::strlen(t.open), t.open) == 0) {
        tag = &t;
        break;
      }
    }
    if (!tag) {
      throw Error(ErrorCode::StrayText,
                  "unexpected text at offset " + std::to_string(pos) + ": '" +
                      raw.substr(pos, 24) + "'");
    }
    pos += std::strlen(tag->open);
    std::size_t close = raw.find(tag->close, pos);
    if (close == std::string::npos) {
      throw Error(ErrorCode::UnclosedTag,
                  std::string(tag->open) + " opened but never closed");
    }
    std::string body = raw.substr(pos, close - pos);
    pos = close + std::strlen(tag->close);
    switch (tag->kind) {
      case SegmentKind::Thinking:
        segments.push_back(Segment::thinking_of(std::move(body)));
        break;
      case SegmentKind::ToolCall:
        segments.push_back(make_tool_call(body));
        break;
      case SegmentKind::ToolReturn:
        segments.push_back(make_tool_return(body));
        break;
      case SegmentKind::Answer:
        segments.push_back(make_answer(body));
        break;
    }
  }
  return segments;
}

namespace {

Json answer_to_json(const AnswerPayload& a) {
  Json j = Json::object();
  j["status"] = a.status;
  j["final_image_index"] = a.final_image_index;
  j["mask_generated"] = a.mask_generated;
  j["synthesis_logic"] = a.synthesis_logic;
  return j;
}

}  // namespace

std::string serialize_segments(const std::vector<Segment>& segments) {
  std::string out;
  for (const auto& s : segments) {
    switch (s.kind()) {
      case SegmentKind::Thinking:
        out += "<thinking>" + s.thinking() + "</thinking>\n";
        break;
      case SegmentKind::ToolCall: {
        Json j = Json::object();
        j["name"] = tool_wire_name(s.call().name);
        j["arguments"] = s.call().arguments;
        out += "<tool_call>" + j.dump() + "</tool_call>\n";
        break;
      }
      case SegmentKind::ToolReturn: {
        Json j = Json::object();
        j["tool"] = tool_wire_name(s.tool_return().tool);
        j["content"] = s.tool_return().content;
        out += "<tool_return>" + j.dump() + "</tool_return>\n";
        break;
      }
      case SegmentKind::Answer:
        out += "<answer>" + answer_to_json(s.answer()).dump() + "</answer>\n";
        break;
    }
  }
  return out;
}

std::string serialize_trajectory(const Trajectory& t) {
  return serialize_segments(t.segments);
}

bool check_format(const Trajectory& t) {
  const auto& segs = t.segments;
  if (segs.empty()) return false;
  std::size_t i = 0;
  bool saw_answer = false;
  while (i < segs.size()) {
    if (segs[i].kind() != SegmentKind::Thinking) return false;
    if (i + 1 >= segs.size()) return false;
    const Segment& action = segs[i + 1];
    if (action.kind() == SegmentKind::ToolCall) {
      if (i + 2 >= segs.size()) return false;
      const Segment& ret = segs[i + 2];
      if (ret.kind() != SegmentKind::ToolReturn) return false;
      if (ret.tool_return().tool != action.call().name) return false;
      i += 3;
    } else if (action.kind() == SegmentKind::Answer) {
      if (i + 2 != segs.size()) return false;  // answer must be last
      saw_answer = true;
      if (!t.has_image(action.answer().final_image_index)) return false;
      i += 2;
    } else {
      return false;
    }
  }
  return saw_answer;
}

Json segment_to_json(const Segment& s) {
  Json j = Json::object();
  switch (s.kind()) {
    case SegmentKind::Thinking:
      j["kind"] = "thinking";
      j["text"] = s.thinking();
      break;
    case SegmentKind::ToolCall:
      j["kind"] = "tool_call";
      j["name"] = tool_wire_name(s.call().name);
      j["arguments"] = s.call().arguments;
      break;
    case SegmentKind::ToolReturn:
      j["kind"] = "tool_return";
      j["tool"] = tool_wire_name(s.tool_return().tool);
      j["content"] = s.tool_return().content;
      break;
    case SegmentKind::Answer:
      j["kind"] = "answer";
      j["status"] = s.answer().status;
      j["final_image_index"] = s.answer().final_image_index;
      j["mask_generated"] = s.answer().mask_generated;
      j["synthesis_logic"] = s.answer().synthesis_logic;
      break;
  }
  return j;
}

Segment segment_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw Error(ErrorCode::SchemaViolation, "segment row lacks a 'kind' string");
  }
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "thinking") {
    if (!j.contains("text") || !j["text"].is_string()) {
      throw Error(ErrorCode::SchemaViolation, "thinking segment lacks 'text'");
    }
    return Segment::thinking_of(j["text"].get<std::string>());
  }
  if (kind == "tool_call") {
    if (!j.contains("name") || !j.contains("arguments")) {
      throw Error(ErrorCode::SchemaViolation, "tool_call segment lacks name/arguments");
    }
    ToolName tool = require_known_tool(j["name"], "tool_call segment");
    validate_tool_arguments(tool, j["arguments"]);
    return Segment::call_of(tool, j["arguments"]);
  }
  if (kind == "tool_return") {
    if (!j.contains("tool") || !j.contains("content")) {
      throw Error(ErrorCode::SchemaViolation, "tool_return segment lacks tool/content");
    }
    ToolName tool = require_known_tool(j["tool"], "tool_return segment");
    validate_observation(tool, j["content"]);
    return Segment::return_of(tool, j["content"]);
  }
  if (kind == "answer") {
    Json body = j;
    body.erase("kind");
    check_fields("answer segment", body,
                 {{"status", FieldType::Text},
                  {"final_image_index", FieldType::PositiveInt},
                  {"mask_generated", FieldType::Bool},
                  {"synthesis_logic", FieldType::Text}});
    AnswerPayload a;
    a.status = body["status"].get<std::string>();
    a.final_image_index = body["final_image_index"].get<std::int64_t>();
    a.mask_generated = body["mask_generated"].get<bool>();
    a.synthesis_logic = body["synthesis_logic"].get<std::string>();
    return Segment::answer_of(std::move(a));
  }
  throw Error(ErrorCode::SchemaViolation, "unknown segment kind '" + kind + "'");
}

Json trajectory_to_json(const Trajectory& t) {
  Json j = Json::object();
  Json task = Json::object();
  task["item_name"] = t.task.item_name;
  task["anomaly_type"] = t.task.anomaly_type;
  task["normal_image"] = t.task.normal_image;
  j["task"] = task;
  Json segs = Json::array();
  for (const auto& s : t.segments) segs.push_back(segment_to_json(s));
  j["segments"] = segs;
  j["images"] = t.images;
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("task") || !j.contains("segments") ||
      !j.contains("images")) {
    throw Error(ErrorCode::SchemaViolation,
                "trajectory row must have task/segments/images");
  }
  Trajectory t;
  const Json& task = j["task"];
  if (!task.is_object() || !task.contains("item_name") ||
      !task.contains("anomaly_type") || !task.contains("normal_image")) {
    throw Error(ErrorCode::SchemaViolation, "trajectory task is malformed");
  }
  t.task.item_name = task["item_name"].get<std::string>();
  t.task.anomaly_type = task["anomaly_type"].get<std::string>();
  t.task.normal_image = task["normal_image"].get<std::string>();
  if (!j["segments"].is_array() || !j["images"].is_array()) {
    throw Error(ErrorCode::SchemaViolation, "segments/images must be arrays");
  }
  for (const auto& s : j["segments"]) t.segments.push_back(segment_from_json(s));
  for (const auto& img : j["images"]) {
    if (!img.is_string()) {
      throw Error(ErrorCode::SchemaViolation, "image references must be strings");
    }
    t.images.push_back(img.get<std::string>());
  }
  return t;
}

void write_trajectory_jsonl(const std::string& path, const std::vector<Trajectory>& ts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  for (const auto& t : ts) out << trajectory_to_json(t).dump() << "\n";
}

std::vector<Trajectory> read_trajectory_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  std::vector<Trajectory> ts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json row = Json::parse(line, nullptr, false);
    if (row.is_discarded()) {
      throw Error(ErrorCode::MalformedJson, "bad JSONL row in '" + path + "'");
    }
    ts.push_back(trajectory_from_json(row));
  }
  return ts;
}

}  // namespace anomagent
