#include "http_client.hpp"

#include <algorithm>
#include <chrono>
#include <thread>

#include "anomagent/error.hpp"
#include "httplib.h"

namespace anomagent::detail {

Json http_post_json(const BackendConfig& cfg, const std::string& path,
                    const Json& body) {
  const std::string payload = body.dump();
  double backoff = cfg.backoff_initial_seconds;
  const int attempts = std::max(1, cfg.max_retries);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    // A client per request: cheap, and safe under concurrent episodes.
    httplib::Client client(cfg.endpoint);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(30, 0);
    httplib::Headers headers;
    if (!cfg.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + cfg.api_key);
    }
    auto res = client.Post(path, headers, payload, "application/json");
    if (res && res->status == 200) {
      Json parsed = Json::parse(res->body, nullptr, false);
      if (parsed.is_discarded()) {
        throw Error(ErrorCode::BadResponse,
                    "response from " + path + " is not valid JSON");
      }
      return parsed;
    }
    if (res && res->status >= 400 && res->status < 500) {
      throw Error(ErrorCode::BadResponse,
                  path + " returned status " + std::to_string(res->status));
    }
    // Transport failure or 5xx: transient, retry with exponential backoff.
    if (attempt + 1 < attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
  }
  throw Error(ErrorCode::BackendUnavailable,
              "no usable response from " + cfg.endpoint + path + " after " +
                  std::to_string(attempts) + " attempts");
}

std::string http_chat_content(const BackendConfig& cfg, Json messages,
                              std::optional<double> temperature) {
  Json body = Json::object();
  body["model"] = cfg.model;
  body["messages"] = std::move(messages);
  if (temperature) body["temperature"] = *temperature;
  const Json reply = http_post_json(cfg, "/v1/chat/completions", body);
  if (!reply.is_object() || !reply.contains("choices") ||
      !reply["choices"].is_array() || reply["choices"].empty()) {
    throw Error(ErrorCode::BadResponse, "chat reply lacks choices");
  }
  const Json& first = reply["choices"][0];
  if (!first.is_object() || !first.contains("message") ||
      !first["message"].is_object() || !first["message"].contains("content") ||
      !first["message"]["content"].is_string()) {
    throw Error(ErrorCode::BadResponse, "chat reply lacks message content");
  }
  return first["message"]["content"].get<std::string>();
}

}  // namespace anomagent::detail
