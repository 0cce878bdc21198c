#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "anomagent/error.hpp"
#include "json.hpp"

namespace anomagent {

using Json = nlohmann::ordered_json;

// The five registered tools. Wire names follow the transcript grammar.
enum class ToolName { PG, IG, QE, KR, MG };

const char* tool_wire_name(ToolName tool);
std::optional<ToolName> tool_from_wire_name(const std::string& name);
std::vector<ToolName> all_tools();

enum class SegmentKind { Thinking, ToolCall, ToolReturn, Answer };

struct ToolCallPayload {
  ToolName name;
  Json arguments;  // schema-validated JSON object

  bool operator==(const ToolCallPayload&) const = default;
};

struct ToolReturnPayload {
  ToolName tool;
  Json content;  // observation payload, see observation schemas

  bool operator==(const ToolReturnPayload&) const = default;
};

struct AnswerPayload {
  std::string status;
  std::int64_t final_image_index = 0;  // 1-based into the image registry
  bool mask_generated = false;
  std::string synthesis_logic;

  bool operator==(const AnswerPayload&) const = default;
};

struct Segment {
  std::variant<std::string, ToolCallPayload, ToolReturnPayload, AnswerPayload> body;

  SegmentKind kind() const { return static_cast<SegmentKind>(body.index()); }

  const std::string& thinking() const { return std::get<std::string>(body); }
  const ToolCallPayload& call() const { return std::get<ToolCallPayload>(body); }
  const ToolReturnPayload& tool_return() const { return std::get<ToolReturnPayload>(body); }
  const AnswerPayload& answer() const { return std::get<AnswerPayload>(body); }

  static Segment thinking_of(std::string text) { return Segment{std::move(text)}; }
  static Segment call_of(ToolName name, Json arguments) {
    return Segment{ToolCallPayload{name, std::move(arguments)}};
  }
  static Segment return_of(ToolName tool, Json content) {
    return Segment{ToolReturnPayload{tool, std::move(content)}};
  }
  static Segment answer_of(AnswerPayload a) { return Segment{std::move(a)}; }

  bool operator==(const Segment&) const = default;
};

struct TaskSpec {
  std::string item_name;
  std::string anomaly_type;
  std::string normal_image;  // image reference (opaque id or path)

  bool operator==(const TaskSpec&) const = default;
};

// One complete multi-turn transcript plus its image registry. Registry slot i
// (0-based) holds the reference for image index i+1; index 1 is the normal
// input image. Each IG tool-return appends exactly one image.
struct Trajectory {
  TaskSpec task;
  std::vector<Segment> segments;
  std::vector<std::string> images;

  std::int64_t image_count() const { return static_cast<std::int64_t>(images.size()); }
  bool has_image(std::int64_t index) const {
    return index >= 1 && index <= image_count();
  }

  bool operator==(const Trajectory&) const = default;
};

// Argument schema checks, strict: required fields present with the right JSON
// type, no extras. Throws Error(SchemaViolation) on failure.
void validate_tool_arguments(ToolName tool, const Json& arguments);

// Observation schema checks for tool_return content, same strictness.
void validate_observation(ToolName tool, const Json& content);

// Parses a raw tagged transcript into segments. Throws Error with code
// UnclosedTag, MalformedJson, UnknownTool, SchemaViolation or StrayText.
std::vector<Segment> parse_transcript(const std::string& raw);

std::string serialize_segments(const std::vector<Segment>& segments);
std::string serialize_trajectory(const Trajectory& t);

// Structural validity indicator: the segment stream must read as
// (Thinking ToolCall ToolReturn)* Thinking Answer, every ToolReturn matching
// the tool of the call before it, and the answer's image index must resolve
// in the registry. Returns false on any violation, never throws.
bool check_format(const Trajectory& t);

Json segment_to_json(const Segment& s);
Segment segment_from_json(const Json& j);

Json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const Json& j);

// JSONL persistence, one trajectory per line.
void write_trajectory_jsonl(const std::string& path, const std::vector<Trajectory>& ts);
std::vector<Trajectory> read_trajectory_jsonl(const std::string& path);

}  // namespace anomagent
