// Golden request/response pairs for the three HTTP wires, plus client-side
// behaviour against live local servers. Set NAMEPROBE_CONFORMANCE_URL (and
// NAMEPROBE_CONFORMANCE_MODEL) to run the golden suite structurally against an
// external server instead of the in-process reference server.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "golden_mock.hpp"
#include "httplib.h"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/http_json.hpp"
#include "nameprobe/logging.hpp"
#include "nameprobe/wire.hpp"

using namespace nameprobe;
using nlohmann::json;

namespace {

const std::filesystem::path kGoldenDir = std::filesystem::path(NAMEPROBE_TEST_DIR) / "golden" / "wire";

std::string env(const char* name) {
  const char* v = std::getenv(name);
  return v ? v : "";
}

// Raw HTTP exchange so status codes are visible.
std::pair<int, json> exchange(const std::string& base, const std::string& method, const std::string& path,
                              const json& body) {
  httplib::Client client(base);
  client.set_read_timeout(std::chrono::seconds(60));
  auto res = method == "GET" ? client.Get(path) : client.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::exception&) {
    parsed = nullptr;
  }
  return {res->status, parsed};
}

void check_structure(const std::string& path, const json& request, const json& response) {
  if (path == "/v1/completions") {
    const auto completions = wire::completions_from_json(response);  // validates token/text agreement
    CHECK(completions.size() == request.value("n", 1u));
    for (const auto& c : completions) {
      CHECK(c.tokens.size() <= request.at("max_tokens").get<std::size_t>());
      for (const auto& t : c.tokens) CHECK(t.top_alternatives.size() <= request.value("logprobs", 0u));
    }
    if (request.value("temperature", 1.0) != 0.0) CHECK(response.contains("seed"));
  } else if (path == "/v1/sentiment") {
    const auto scores = sentiment::sentiment_response_from_json(response, request.at("texts").size());
    CHECK(scores.size() == request.at("texts").size());
  } else if (path == "/v1/qa") {
    const auto a = swap::qa_answer_from_json(response);
    if (request.at("format") == "winogrande_fitb") {
      const auto& c = request.at("candidates");
      CHECK((a.answer_text == c[0].get<std::string>() || a.answer_text == c[1].get<std::string>()));
    }
  }
}

}  // namespace

TEST_CASE("golden wire exchanges") {
  const std::string external = env("NAMEPROBE_CONFORMANCE_URL");
  const bool regenerate = env("NAMEPROBE_REGENERATE_GOLDEN") == "1";
  std::unique_ptr<server::ReferenceServer> local;
  std::string base = external;
  std::string endpoints = env("NAMEPROBE_CONFORMANCE_ENDPOINTS");
  if (external.empty()) {
    local = std::make_unique<server::ReferenceServer>(testing::golden_server_config());
    local->start();
    base = local->base_url();
    endpoints = "/v1/completions,/v1/sentiment,/v1/qa";
  } else if (endpoints.empty()) {
    endpoints = "/v1/completions,/v1/qa";
  }

  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(kGoldenDir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  REQUIRE(files.size() >= 10);
  for (const auto& file : files) {
    json golden = json::parse(read_file(file));
    const std::string path = golden.at("path");
    if (endpoints.find(path) == std::string::npos) continue;
    json request = golden.at("request");
    if (!external.empty() && request.value("model", "") == "golden-mock") {
      request["model"] = env("NAMEPROBE_CONFORMANCE_MODEL");
    }
    CAPTURE(file.filename().string());
    const auto [status, response] = exchange(base, golden.at("method"), path, request);
    CHECK(status == golden.at("expect_status").get<int>());
    if (status != 200) {
      CHECK(response.contains("error"));
      continue;
    }
    check_structure(path, request, response);
    // Same request twice gives the same bytes.
    CHECK(exchange(base, golden.at("method"), path, request).second == response);
    if (!external.empty()) continue;
    if (regenerate) {
      golden["reference_response"] = response;
      write_file_atomic(file, golden.dump(2) + "\n");
    } else {
      CHECK(response == golden.at("reference_response"));
    }
  }
}

TEST_CASE("golden greedy response matches hand-computed logprobs") {
  const json golden = json::parse(read_file(kGoldenDir / "completions_greedy.json"));
  const auto& choice = golden.at("reference_response").at("choices").at(0);
  CHECK(choice.at("text") == " Trump Trump");
  CHECK(choice.at("finish_reason") == "length");
  const auto& lp = choice.at("logprobs");
  CHECK(lp.at("tokens") == json::array({" Trump", " Trump"}));
  CHECK(lp.at("token_logprobs")[0].get<double>() == doctest::Approx(std::log(0.99)).epsilon(1e-15));
  CHECK(lp.at("top_logprobs")[0][1].at("token") == " is");
  CHECK(lp.at("top_logprobs")[0][1].at("logprob").get<double>() == doctest::Approx(std::log(0.01)).epsilon(1e-15));
  const json rollout = json::parse(read_file(kGoldenDir / "completions_initial_rollout.json"));
  CHECK(rollout.at("reference_response").at("choices").at(0).at("text") == " B. Reich was");
  CHECK(rollout.at("reference_response").at("choices").at(0).at("finish_reason") == "stop");
  const json qa = json::parse(read_file(kGoldenDir / "qa_squad.json"));
  CHECK(qa.at("reference_response").at("answer_text") == "Emily");
}

TEST_CASE("HTTP client reproduces the in-process backend") {
  server::ReferenceServer srv(testing::golden_server_config());
  srv.start();
  lm::LmClient remote(std::make_shared<lm::HttpCompletionBackend>(lm::HttpEndpoint{srv.base_url(), "golden-mock"}));
  lm::LmClient local(testing::golden_model());
  for (const auto& req : std::vector<lm::CompletionRequest>{
           {"A new report from CNN says that Donald", lm::SamplingSpec::greedy(5), 3, 1},
           {"Robert", lm::SamplingSpec::greedy(5), 2, 2},
           {"Donald is a", lm::SamplingSpec::nucleus(0.9, 12, 99), 0, 4},
           {"Donald is a", lm::SamplingSpec::topk(2, 12, 5), 5, 2}}) {
    CHECK(remote.complete(req) == local.complete(req));
  }
  CHECK(remote.next_token_distribution("Donald", 5) == local.next_token_distribution("Donald", 5));
  CHECK(remote.sample_endings("Hillary is a", lm::SamplingSpec::nucleus(0.9, 20, 3), 5) ==
        local.sample_endings("Hillary is a", lm::SamplingSpec::nucleus(0.9, 20, 3), 5));
  // Base URLs with a trailing slash still hit /v1/completions.
  lm::LmClient slash(std::make_shared<lm::HttpCompletionBackend>(lm::HttpEndpoint{srv.base_url() + "/", "golden-mock"}));
  CHECK(slash.complete({"Donald", lm::SamplingSpec::greedy(1), 0, 1})[0].text == " Trump");
}

TEST_CASE("bearer token from the environment") {
  auto config = testing::golden_server_config();
  config.required_token = "s3cret";
  server::ReferenceServer srv(config);
  srv.start();
  const lm::CompletionRequest req{"Donald", lm::SamplingSpec::greedy(1), 0, 1};
  lm::HttpCompletionBackend anonymous({srv.base_url(), "golden-mock", 5000, "NAMEPROBE_TEST_TOKEN_UNSET"});
  CHECK_THROWS_AS(anonymous.complete(req), ProtocolError);
  ::setenv("NAMEPROBE_TEST_TOKEN", "s3cret", 1);
  lm::HttpCompletionBackend authed({srv.base_url(), "golden-mock", 5000, "NAMEPROBE_TEST_TOKEN"});
  CHECK(authed.complete(req)[0].text == " Trump");
  ::setenv("NAMEPROBE_TEST_TOKEN", "wrong", 1);
  CHECK_THROWS_AS(authed.complete(req), ProtocolError);
  ::unsetenv("NAMEPROBE_TEST_TOKEN");
}

namespace {

// Scriptable raw server for failure modes.
struct ScriptedServer {
  httplib::Server http;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};

  template <typename Handler>
  explicit ScriptedServer(Handler h) {
    http.Post("/v1/completions", [this, h](const httplib::Request& req, httplib::Response& res) {
      h(hits.fetch_add(1), req, res);
    });
    port = http.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { http.listen_after_bind(); });
    http.wait_until_ready();
  }
  ~ScriptedServer() {
    http.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

json canned_ok(const lm::CompletionRequest& req) {
  return wire::completions_to_json("golden-mock", testing::golden_model()->complete(req), req);
}

}  // namespace

TEST_CASE("status mapping and retries over HTTP") {
  auto quiet = set_log_sink(nullptr);
  const lm::CompletionRequest req{"Donald", lm::SamplingSpec::greedy(1), 0, 1};
  const lm::RetryPolicy fast{3, std::chrono::milliseconds(1), 1.0};

  SUBCASE("503 then success is retried") {
    ScriptedServer s([&](int hit, const httplib::Request&, httplib::Response& res) {
      if (hit < 2) res.status = 503;
      else res.set_content(canned_ok(req).dump(), "application/json");
    });
    lm::LmClient client(std::make_shared<lm::HttpCompletionBackend>(lm::HttpEndpoint{s.url(), "golden-mock"}),
                        std::nullopt, fast);
    CHECK(client.complete(req)[0].text == " Trump");
    CHECK(s.hits == 3);
  }
  SUBCASE("429 forever exhausts the budget") {
    ScriptedServer s([](int, const httplib::Request&, httplib::Response& res) { res.status = 429; });
    lm::LmClient client(std::make_shared<lm::HttpCompletionBackend>(lm::HttpEndpoint{s.url(), "golden-mock"}),
                        std::nullopt, fast);
    CHECK_THROWS_AS(client.complete(req), TransportError);
    CHECK(s.hits == 3);
  }
  SUBCASE("400 is not retried") {
    ScriptedServer s([](int, const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content("{\"error\":\"bad\"}", "application/json");
    });
    lm::LmClient client(std::make_shared<lm::HttpCompletionBackend>(lm::HttpEndpoint{s.url(), "golden-mock"}),
                        std::nullopt, fast);
    CHECK_THROWS_AS(client.complete(req), ProtocolError);
    CHECK(s.hits == 1);
  }
  SUBCASE("malformed bodies are protocol errors") {
    ScriptedServer s([&](int hit, const httplib::Request&, httplib::Response& res) {
      json ok = canned_ok(req);
      if (hit == 0) {
        res.set_content("not json", "application/json");
      } else if (hit == 1) {
        ok["choices"][0].erase("logprobs");
        res.set_content(ok.dump(), "application/json");
      } else if (hit == 2) {
        ok["choices"][0]["text"] = " Trumpet";
        res.set_content(ok.dump(), "application/json");
      } else {
        ok["choices"].push_back(ok["choices"][0]);
        res.set_content(ok.dump(), "application/json");
      }
    });
    lm::HttpCompletionBackend backend({s.url(), "golden-mock"});
    for (int i = 0; i < 4; ++i) CHECK_THROWS_AS(backend.complete(req), ProtocolError);
  }
  SUBCASE("legacy map-form top_logprobs are accepted") {
    ScriptedServer s([&](int, const httplib::Request&, httplib::Response& res) {
      json ok = canned_ok({"Donald", lm::SamplingSpec::greedy(1), 2, 1});
      ok["choices"][0]["logprobs"]["top_logprobs"] =
          json::array({json{{" Trump", std::log(0.99)}, {" is", std::log(0.01)}}});
      res.set_content(ok.dump(), "application/json");
    });
    lm::LmClient client(std::make_shared<lm::HttpCompletionBackend>(lm::HttpEndpoint{s.url(), "golden-mock"}));
    const auto dist = client.next_token_distribution("Donald", 2);
    REQUIRE(dist.size() == 2);
    CHECK(dist[0].first == "Trump");
    CHECK(dist[0].second == doctest::Approx(0.99));
  }
  SUBCASE("connection refused is a transport error") {
    int port = 0;
    {
      httplib::Server probe;
      port = probe.bind_to_any_port("127.0.0.1");
    }
    lm::LmClient client(std::make_shared<lm::HttpCompletionBackend>(
                            lm::HttpEndpoint{"http://127.0.0.1:" + std::to_string(port), "golden-mock", 500}),
                        std::nullopt, fast);
    CHECK_THROWS_AS(client.complete(req), TransportError);
  }
  set_log_sink(quiet);
}

TEST_CASE("HTTP sentiment and QA providers") {
  server::ReferenceServer srv(testing::golden_server_config());
  srv.start();
  sentiment::HttpSentimentProvider http({srv.base_url(), ""});
  auto lexicon = sentiment::load_lexicon(testing::data_dir() / "lexicon");
  const std::vector<std::string> texts{"a terrible awful corrupt man", "a kind friend", "plain words"};
  CHECK(http.score_batch(texts) == lexicon->score_batch(texts));
  CHECK(http.provider_id() == "http:" + srv.base_url());

  const auto templates = swap::load_templates(testing::data_dir() / "swap_templates.json").templates;
  swap::HttpQaModel qa({srv.base_url(), "role"});
  swap::RoleConsistentQa direct(templates);
  for (const auto& t : templates) {
    const auto req = swap::QaRequest::from(swap::expand_instance(t, "Hillary", "Emily"));
    CHECK(qa.answer(req) == direct.answer(req));
  }
  CHECK_FALSE(qa.metadata().has_value());

  auto with_meta = testing::golden_server_config();
  with_meta.qa_metadata = json{{"task", "squad"}, {"dev_f1", 83.2}};
  server::ReferenceServer srv2(with_meta);
  srv2.start();
  swap::HttpQaModel qa2({srv2.base_url(), "role"});
  REQUIRE(qa2.metadata().has_value());
  CHECK(qa2.metadata()->at("dev_f1") == 83.2);
}

TEST_CASE("sentiment and QA wire validation") {
  CHECK_THROWS_AS(sentiment::sentiment_response_from_json(json{{"scores", json::array()}}, 1), ProtocolError);
  CHECK_THROWS_AS(sentiment::sentiment_response_from_json(json{{"scores", {{{"negative", 1.5}}}}}, 1), ProtocolError);
  const auto parsed = sentiment::sentiment_response_from_json(json{{"scores", {nullptr, {{"negative", 0.25}}}}}, 2);
  CHECK_FALSE(parsed[0].has_value());
  CHECK(parsed[1]->positive == 0.75);
  CHECK_THROWS_AS(swap::qa_request_from_json(json{{"context", "c"}}), ProtocolError);
  CHECK_THROWS_AS(swap::qa_answer_from_json(json{{"answer", "x"}}), ProtocolError);
  const swap::QaRequest r{"c", "q", swap::QaFormat::winogrande_fitb, {"A", "B"}};
  CHECK(swap::qa_request_from_json(swap::qa_request_to_json(r)) == r);
}

TEST_CASE("sampling spec json") {
  for (const auto& s : {lm::SamplingSpec::greedy(5), lm::SamplingSpec::nucleus(0.9, 150, 3),
                        lm::SamplingSpec::topk(25, 300, 4)}) {
    CHECK(wire::sampling_from_json(wire::sampling_to_json(s)) == s);
  }
  CHECK_THROWS_AS(wire::sampling_from_json(json{{"mode", "beam"}, {"max_tokens", 3}}), ValidationError);
  CHECK_THROWS_AS(wire::sampling_from_json(json{{"mode", "nucleus"}, {"max_tokens", 3}, {"top_p", 2.0}}),
                  ValidationError);
}
