#include "anomagent/error.hpp"
#include "anomagent/prompts.hpp"
#include "anomagent/tools.hpp"
#include "http_client.hpp"

// Wire shapes:
//   PG/QE/KR  -> POST {endpoint}/v1/chat/completions
//                {"model", "messages": [{"role":"system",...},{"role":"user",...}]}
//                reply: {"choices":[{"message":{"content": <text>}}]}
//                QE replies must carry a JSON verdict in the content text.
//   IG/MG and reverse normalization
//             -> POST {endpoint}/v1/images/edits
//                {"model", "image": <reference>, "prompt": <text>}
//                reply: {"image": <new reference>}
// Authorization: Bearer token when an API key is configured.

namespace anomagent {

namespace {

const char* kMaskInstruction =
    "Compare this synthesized image with its defect-free reference and return "
    "a binary mask of the defect region.";

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

const std::string& image_ref(const Trajectory& ctx, std::int64_t index) {
  return ctx.images[static_cast<std::size_t>(index - 1)];
}

}  // namespace

RemoteBackend::RemoteBackend(BackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) {
    throw Error(ErrorCode::ConfigError, "remote backend requires an endpoint");
  }
}

Json RemoteBackend::post_json(const std::string& path, const Json& body) {
  return detail::http_post_json(config_, path, body);
}

std::string RemoteBackend::chat_request(const std::string& system_prompt,
                                        const Json& user_payload) {
  Json messages = Json::array();
  messages.push_back({{"role", "system"}, {"content", system_prompt}});
  messages.push_back({{"role", "user"}, {"content", user_payload.dump()}});
  return detail::http_chat_content(config_, std::move(messages));
}

std::string RemoteBackend::edit_request(const std::string& image,
                                        const std::string& prompt) {
  Json body = Json::object();
  body["model"] = config_.model;
  body["image"] = image;
  body["prompt"] = prompt;
  const Json reply = post_json("/v1/images/edits", body);
  if (!reply.is_object() || !reply.contains("image") ||
      !reply["image"].is_string() || reply["image"].get<std::string>().empty()) {
    throw Error(ErrorCode::BadResponse, "edit reply lacks an image reference");
  }
  return reply["image"].get<std::string>();
}

Observation RemoteBackend::invoke(ToolName tool, const Json& args,
                                  const Trajectory& ctx) {
  validate_tool_arguments(tool, args);
  Observation obs;
  obs.payload.tool = tool;
  switch (tool) {
    case ToolName::PG: {
      const std::int64_t index = require_image(args, "image", ctx);
      const std::string item = args.at("item_name").get<std::string>();
      const std::string anomaly = args.at("anomaly_type").get<std::string>();
      Json user = Json::object();
      user["image"] = image_ref(ctx, index);
      user["item_name"] = item;
      user["anomaly_type"] = anomaly;
      Json content = Json::object();
      content["prompt"] = chat_request(prompts::pg_prompt(item, anomaly), user);
      obs.payload.content = std::move(content);
      break;
    }
    case ToolName::IG: {
      const std::int64_t target = require_image(args, "target_image", ctx);
      const std::string new_ref = edit_request(
          image_ref(ctx, target), args.at("prompt").get<std::string>());
      Json content = Json::object();
      content["new_image_index"] = ctx.image_count() + 1;
      obs.payload.content = std::move(content);
      obs.new_image = new_ref;
      break;
    }
    case ToolName::QE: {
      const std::int64_t index = require_image(args, "anomaly_image", ctx);
      const std::string item = args.at("item_name").get<std::string>();
      const std::string anomaly = args.at("anomaly_type").get<std::string>();
      Json user = Json::object();
      user["anomaly_image"] = image_ref(ctx, index);
      user["item_name"] = item;
      user["anomaly_type"] = anomaly;
      const std::string text =
          chat_request(prompts::qe_prompt(item, anomaly), user);
      Json verdict = Json::parse(text, nullptr, false);
      if (verdict.is_discarded()) {
        throw Error(ErrorCode::BadResponse, "judge reply is not JSON: " + text);
      }
      obs.payload.content = QualityVerdict::from_content(verdict).to_content();
      break;
    }
    case ToolName::KR: {
      const std::string item = args.at("item_name").get<std::string>();
      const std::string anomaly = args.at("anomaly_type").get<std::string>();
      Json user = Json::object();
      user["item_name"] = item;
      user["anomaly_type"] = anomaly;
      Json content = Json::object();
      content["knowledge"] = chat_request(prompts::kr_prompt(item, anomaly), user);
      obs.payload.content = std::move(content);
      break;
    }
    case ToolName::MG: {
      const std::int64_t index = require_image(args, "anomaly_image", ctx);
      Json content = Json::object();
      content["mask_reference"] =
          edit_request(image_ref(ctx, index), kMaskInstruction);
      obs.payload.content = std::move(content);
      break;
    }
  }
  validate_observation(tool, obs.payload.content);
  return obs;
}

std::string RemoteBackend::reverse_normalize(const std::string& anomaly_image) {
  return edit_request(anomaly_image, prompts::reverse_prompt());
}

}  // namespace anomagent
