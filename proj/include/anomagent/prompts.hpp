#pragma once

#include <string>

namespace anomagent::prompts {

// Agent-facing system prompt: persona, output tag format, tool signatures,
// prompt construction rules. Drives the remote policy adapter.
const std::string& system_prompt();

// Per-task user message. Slots: item_name, anomaly_type.
std::string user_prompt(const std::string& item_name, const std::string& anomaly_type);

// System prompt for the remote PG tool (prompt engineering persona).
std::string pg_prompt(const std::string& item_name, const std::string& anomaly_type);

// System prompt for the remote QE judge (0-5 location/quality rubric,
// strict JSON output).
std::string qe_prompt(const std::string& item_name, const std::string& anomaly_type);

// System prompt for the remote KR tool.
std::string kr_prompt(const std::string& item_name, const std::string& anomaly_type);

// Static single-shot editing prompt used by non-agentic baselines.
std::string fixed_prompt(const std::string& item_name, const std::string& anomaly_type);

// Instruction sent to the image-edit endpoint to reconstruct a defect-free
// image from an anomaly image.
const std::string& reverse_prompt();

}  // namespace anomagent::prompts
