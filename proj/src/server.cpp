#include "nameprobe/server.hpp"

#include "httplib.h"
#include "nameprobe/errors.hpp"
#include "nameprobe/wire.hpp"

namespace nameprobe::server {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void error_reply(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, json{{"error", message}});
}

}  // namespace

ReferenceServer::ReferenceServer(ServerConfig config)
    : config_(std::move(config)), http_(std::make_unique<httplib::Server>()) {
  install_routes();
}

ReferenceServer::~ReferenceServer() { stop(); }

void ReferenceServer::install_routes() {
  // Wraps a JSON handler with auth, parsing and error mapping.
  auto handle = [this](auto fn) {
    return [this, fn](const httplib::Request& req, httplib::Response& res) {
      served_.fetch_add(1);
      if (!config_.required_token.empty() &&
          req.get_header_value("Authorization") != "Bearer " + config_.required_token) {
        error_reply(res, 401, "missing or wrong bearer token");
        return;
      }
      try {
        const json body = req.body.empty() ? json::object() : json::parse(req.body);
        fn(body, res);
      } catch (const json::parse_error& e) {
        error_reply(res, 400, std::string("malformed JSON: ") + e.what());
      } catch (const ProtocolError& e) {
        error_reply(res, 400, e.what());
      } catch (const ValidationError& e) {
        error_reply(res, 400, e.what());
      } catch (const std::exception& e) {
        error_reply(res, 500, e.what());
      }
    };
  };

  http_->Get("/health", [this](const httplib::Request&, httplib::Response& res) {
    served_.fetch_add(1);
    json models = json::array();
    for (const auto& [id, m] : config_.models) models.push_back(id);
    reply(res, 200, json{{"status", "ok"}, {"models", models}, {"sentiment", config_.sentiment != nullptr},
                         {"qa", config_.qa != nullptr}});
  });

  http_->Post("/v1/completions", handle([this](const json& body, httplib::Response& res) {
    const auto model = body.value("model", std::string());
    const auto it = config_.models.find(model);
    if (it == config_.models.end()) {
      error_reply(res, 404, "unknown model '" + model + "'");
      return;
    }
    const auto request = wire::completion_request_from_json(body);
    reply(res, 200, wire::completions_to_json(model, it->second->complete(request), request));
  }));

  http_->Post("/v1/sentiment", handle([this](const json& body, httplib::Response& res) {
    if (!config_.sentiment) {
      error_reply(res, 404, "no sentiment provider configured");
      return;
    }
    const auto texts = sentiment::sentiment_request_from_json(body);
    reply(res, 200, sentiment::sentiment_response_to_json(config_.sentiment->score_batch(texts)));
  }));

  http_->Post("/v1/qa", handle([this](const json& body, httplib::Response& res) {
    if (!config_.qa) {
      error_reply(res, 404, "no QA model configured");
      return;
    }
    reply(res, 200, swap::qa_answer_to_json(config_.qa->answer(swap::qa_request_from_json(body))));
  }));

  http_->Get("/v1/metadata", [this](const httplib::Request&, httplib::Response& res) {
    served_.fetch_add(1);
    auto meta = config_.qa_metadata;
    if (!meta && config_.qa) meta = config_.qa->metadata();
    if (!meta) {
      error_reply(res, 404, "no metadata");
      return;
    }
    reply(res, 200, *meta);
  });
}

int ReferenceServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw TransportError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return port_;
}

void ReferenceServer::listen_blocking(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!http_->listen(host, port)) throw TransportError("cannot listen on " + host + ":" + std::to_string(port));
}

void ReferenceServer::stop() {
  if (http_) http_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string ReferenceServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace nameprobe::server
