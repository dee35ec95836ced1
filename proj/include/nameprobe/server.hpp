#pragma once

// In-process HTTP server speaking the completions, sentiment and QA wires.
// Backs the `serve-mock` command and the wire tests.

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include "json.hpp"
#include "nameprobe/lm_client.hpp"
#include "nameprobe/sentiment.hpp"
#include "nameprobe/swap.hpp"

namespace httplib {
class Server;
}

namespace nameprobe::server {

struct ServerConfig {
  std::map<std::string, std::shared_ptr<lm::CompletionBackend>> models;  // by model id
  std::shared_ptr<sentiment::SentimentProvider> sentiment;
  std::shared_ptr<swap::QaModel> qa;
  std::optional<nlohmann::json> qa_metadata;
  std::string required_token;  // when set, requests need "Authorization: Bearer <token>"
};

class ReferenceServer {
 public:
  explicit ReferenceServer(ServerConfig config);
  ~ReferenceServer();
  ReferenceServer(const ReferenceServer&) = delete;
  ReferenceServer& operator=(const ReferenceServer&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  // Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  // Serves on the calling thread until stop() is called from elsewhere.
  void listen_blocking(const std::string& host, int port);
  void stop();

  std::string base_url() const;
  std::uint64_t requests_served() const { return served_.load(); }

 private:
  void install_routes();

  ServerConfig config_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  std::atomic<std::uint64_t> served_{0};
};

}  // namespace nameprobe::server
