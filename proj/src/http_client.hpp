#pragma once

#include <optional>
#include <string>

#include "anomagent/config.hpp"
#include "anomagent/protocol.hpp"

// Internal HTTP plumbing shared by the remote tool backend and the remote
// policy adapter. Not part of the public API.

namespace anomagent::detail {

// POST a JSON body, with bounded retry and exponential backoff on transport
// failures and 5xx. Throws Error{BadResponse} on 4xx or non-JSON replies and
// Error{BackendUnavailable} once retries are exhausted.
Json http_post_json(const BackendConfig& cfg, const std::string& path,
                    const Json& body);

// Chat-completions round trip; returns choices[0].message.content.
std::string http_chat_content(const BackendConfig& cfg, Json messages,
                              std::optional<double> temperature = std::nullopt);

}  // namespace anomagent::detail
