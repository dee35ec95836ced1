#include "nameprobe/http_json.hpp"

#include <cstdlib>

#include "httplib.h"
#include "nameprobe/errors.hpp"

namespace nameprobe {

using nlohmann::json;

namespace {

struct SplitUrl {
  std::string origin;
  std::string path_prefix;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  if (path_start == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path_start), prefix};
}

httplib::Headers auth_headers(const std::string& auth_env) {
  httplib::Headers headers;
  if (!auth_env.empty()) {
    if (const char* token = std::getenv(auth_env.c_str()); token && *token) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }
  return headers;
}

json parse_reply(const httplib::Response& res, const std::string& what) {
  if (res.status == 429 || res.status >= 500) {
    throw TransportError(what + " returned status " + std::to_string(res.status));
  }
  if (res.status != 200) {
    throw ProtocolError(what + " returned status " + std::to_string(res.status) + ": " + res.body.substr(0, 200));
  }
  try {
    return json::parse(res.body);
  } catch (const json::exception& e) {
    throw ProtocolError("malformed JSON from " + what + ": " + e.what());
  }
}

}  // namespace

json http_post_json(const std::string& base_url, const std::string& path, const json& body, int timeout_ms,
                    const std::string& auth_env) {
  const auto url = split_url(base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
  client.set_write_timeout(std::chrono::milliseconds(timeout_ms));
  const auto res = client.Post(url.path_prefix + path, auth_headers(auth_env), body.dump(), "application/json");
  if (!res) throw TransportError("POST " + base_url + path + " failed: " + httplib::to_string(res.error()));
  return parse_reply(*res, "POST " + base_url + path);
}

json http_get_json(const std::string& base_url, const std::string& path, int timeout_ms,
                             const std::string& auth_env) {
  const auto url = split_url(base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
  const auto res = client.Get(url.path_prefix + path, auth_headers(auth_env));
  if (!res) throw TransportError("GET " + base_url + path + " failed: " + httplib::to_string(res.error()));
  return parse_reply(*res, "GET " + base_url + path);
}

}  // namespace nameprobe
