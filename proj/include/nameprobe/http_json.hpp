#pragma once

#include <string>

#include "json.hpp"

namespace nameprobe {

// POST a JSON body to base_url + path and parse the JSON reply.
// 429/5xx and connection failures raise TransportError; other non-200
// statuses and unparsable bodies raise ProtocolError.
nlohmann::json http_post_json(const std::string& base_url, const std::string& path, const nlohmann::json& body,
                              int timeout_ms, const std::string& auth_env);

// GET variant with the same error mapping.
nlohmann::json http_get_json(const std::string& base_url, const std::string& path, int timeout_ms,
                             const std::string& auth_env);

}  // namespace nameprobe
