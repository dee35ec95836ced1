#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>

#include "doctest.h"
#include "nameprobe/errors.hpp"
#include "nameprobe/lm_client.hpp"
#include "nameprobe/logging.hpp"
#include "nameprobe/rng.hpp"
#include "temp_dir.hpp"

using namespace nameprobe;
using namespace nameprobe::lm;

namespace {

std::shared_ptr<MockModel> donald_mock() {
  return std::make_shared<MockModel>(
      "mock", std::vector<MockRule>{{"Donald", {{"Trump", 0.99}, {"is", 0.01}}, ""},
                                    {"Robert", {{"B", 0.6}, {"Mueller", 0.4}}, ". Reich was"},
                                    {"is a", {{"kind", 0.5}, {"good", 0.3}, {"bad", 0.2}}, ""}});
}

// Backend wrapper that fails the first `failures` calls with a transport error.
class FlakyBackend : public CompletionBackend {
 public:
  FlakyBackend(std::shared_ptr<CompletionBackend> inner, int failures) : inner_(std::move(inner)), left_(failures) {}
  std::string model_id() const override { return inner_->model_id(); }
  std::vector<Completion> complete(const CompletionRequest& r) override {
    if (left_.fetch_sub(1) > 0) throw TransportError("simulated outage");
    return inner_->complete(r);
  }

 private:
  std::shared_ptr<CompletionBackend> inner_;
  std::atomic<int> left_;
};

RetryPolicy fast_retry() { return RetryPolicy{3, std::chrono::milliseconds(0), 2.0}; }

}  // namespace

TEST_CASE("greedy mock completion follows the rule table") {
  LmClient client(donald_mock());
  const auto out = client.complete({"A new report from CNN says that Donald", SamplingSpec::greedy(1), 2, 1});
  REQUIRE(out.size() == 1);
  CHECK(out[0].text == " Trump");
  CHECK(out[0].tokens[0].logprob == doctest::Approx(std::log(0.99)));
  REQUIRE(out[0].tokens[0].top_alternatives.size() == 2);
  CHECK(out[0].tokens[0].top_alternatives[1].token == " is");
}

TEST_CASE("request validation") {
  LmClient client(donald_mock());
  CHECK_THROWS_AS(client.complete({"Donald", SamplingSpec::greedy(0), 0, 1}), ValidationError);
  CHECK_THROWS_AS(client.complete({"Donald", SamplingSpec::greedy(1), 0, 0}), ValidationError);
  CHECK_THROWS_AS(client.complete({"Donald", SamplingSpec::greedy(1), kMaxLogprobTopN + 1, 1}), ValidationError);
  CHECK_THROWS_AS(client.complete({"Donald", SamplingSpec::nucleus(0.0, 5, 1), 0, 1}), ValidationError);
  CHECK_THROWS_AS(client.complete({"Donald", SamplingSpec::nucleus(1.5, 5, 1), 0, 1}), ValidationError);
  CHECK_THROWS_AS(client.complete({"Donald", SamplingSpec::topk(0, 5, 1), 0, 1}), ValidationError);
  CHECK_THROWS_AS(MockRule({"x", {{"a", 0.5}}, ""}).validate(), ValidationError);
}

TEST_CASE("greedy samples are identical") {
  LmClient client(donald_mock());
  const auto out = client.complete({"Donald", SamplingSpec::greedy(4), 0, 3});
  REQUIRE(out.size() == 3);
  CHECK(out[0] == out[1]);
  CHECK(out[1] == out[2]);
  CHECK(out[0].text == " Trump Trump Trump Trump");
}

TEST_CASE("continuation rules emit initials and stop") {
  LmClient client(donald_mock());
  const auto out = client.complete({"Robert", SamplingSpec::greedy(10), 1, 1});
  CHECK(out[0].text == " B. Reich was");
  CHECK(out[0].finish_reason == FinishReason::stop);
  CHECK(out[0].tokens.size() == 4);
  const auto short_out = client.complete({"Robert", SamplingSpec::greedy(2), 1, 1});
  CHECK(short_out[0].text == " B.");
  CHECK(short_out[0].finish_reason == FinishReason::length);
}

TEST_CASE("next_token_distribution") {
  LmClient client(donald_mock());
  const auto dist = client.next_token_distribution("Donald", 5);
  REQUIRE(dist.size() == 2);
  CHECK(dist[0].first == "Trump");
  CHECK(dist[0].second == doctest::Approx(0.99));
  CHECK(dist[1].first == "is");
  CHECK(dist[1].second == doctest::Approx(0.01));
  CHECK(client.next_token_distribution("Donald", 1).size() == 1);
  CHECK_THROWS_AS(client.next_token_distribution("Donald", 0), ValidationError);
}

TEST_CASE("property: next-token distributions are monotone and bounded") {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    std::map<std::string, double> dist;
    const std::size_t n = 1 + rng.below(8);
    double total = 0.0;
    std::vector<double> raw(n);
    for (auto& r : raw) total += (r = 0.05 + rng.uniform());
    for (std::size_t i = 0; i < n; ++i) dist["w" + std::to_string(i)] = raw[i] / total;
    // Renormalise exactly enough for the 1e-9 rule.
    double s = 0.0;
    for (auto& [k, v] : dist) s += v;
    dist.begin()->second += 1.0 - s;
    LmClient client(std::make_shared<MockModel>("m", std::vector<MockRule>{{"p", dist, ""}}));
    const auto out = client.next_token_distribution("p", static_cast<std::uint32_t>(1 + rng.below(10)));
    double sum = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(out[i].second > 0.0);
      CHECK(out[i].second <= 1.0);
      if (i) CHECK(out[i].second <= out[i - 1].second);
      sum += out[i].second;
    }
    CHECK(sum <= 1.0 + 1e-6);
  }
}

TEST_CASE("sample_endings is reproducible and batching-invariant") {
  LmClient client(donald_mock());
  const auto spec = SamplingSpec::nucleus(0.9, 12, 1234);
  const auto endings = client.sample_endings("Donald is a", spec, 20);
  REQUIRE(endings.size() == 20);
  CHECK(endings == client.sample_endings("Donald is a", spec, 20));
  for (std::uint32_t i = 0; i < 20; ++i) CHECK(endings[i] == client.sample_ending("Donald is a", spec, i));
  const auto one = client.sample_endings("Donald is a", spec, 1);
  CHECK(one[0] == endings[0]);
  // Nucleus p=0.9 over {0.5,0.3,0.2} keeps all three words; with p=0.5 only "kind".
  const auto narrow = client.sample_endings("Donald is a", SamplingSpec::nucleus(0.5, 6, 9), 5);
  for (const auto& e : narrow) CHECK(e == " kind kind kind kind kind kind");
  const auto top1 = client.sample_endings("Donald is a", SamplingSpec::topk(1, 3, 9), 3);
  for (const auto& e : top1) CHECK(e == " kind kind kind");
  bool varied = false;
  for (const auto& e : endings) varied = varied || e != endings[0];
  CHECK(varied);
  CHECK_THROWS_AS(client.sample_endings("x", SamplingSpec::greedy(5), 3), ValidationError);
  CHECK_THROWS_AS(client.sample_endings("x", spec, 0), ValidationError);
}

TEST_CASE("property: completion text is the concatenation of its tokens") {
  LmClient client(donald_mock());
  Rng rng(21);
  const std::vector<std::string> prompts{"Donald", "Robert", "Jane is a", "nothing matches"};
  for (int trial = 0; trial < 40; ++trial) {
    const auto spec = SamplingSpec::topk(1 + static_cast<std::uint32_t>(rng.below(3)),
                                         1 + static_cast<std::uint32_t>(rng.below(20)), rng.next());
    for (const auto& c : client.complete({prompts[rng.below(prompts.size())], spec, 3, 2})) {
      std::string joined;
      for (const auto& t : c.tokens) joined += t.token;
      CHECK(joined == c.text);
      CHECK(c.tokens.size() <= spec.max_tokens);
    }
  }
}

TEST_CASE("cache hits avoid backend requests") {
  testing::TempDir dir;
  LmClient client(donald_mock(), GenerationCache(dir.path()), fast_retry());
  const CompletionRequest req{"Donald is a", SamplingSpec::nucleus(0.9, 8, 5), 0, 2};
  const auto first = client.complete(req);
  CHECK(client.backend_requests() == 1);
  const auto second = client.complete(req);
  CHECK(client.backend_requests() == 1);
  CHECK(client.cache_hits() == 1);
  CHECK(first == second);

  // A fresh client on the same directory reads the persisted blob.
  LmClient other(donald_mock(), GenerationCache(dir.path()), fast_retry());
  CHECK(other.complete(req) == first);
  CHECK(other.backend_requests() == 0);
}

TEST_CASE("cache keys") {
  CompletionRequest a{"Donald is a", SamplingSpec::nucleus(0.9, 8, 5), 0, 1};
  auto b = a;
  b.sampling.seed = 6;
  CHECK(cache_key("m", a) != cache_key("m", b));
  CHECK(cache_key("m", a) != cache_key("other", a));
  auto c = a;
  c.sampling.top_p = 0.8;
  CHECK(cache_key("m", a) != cache_key("m", c));
  CompletionRequest g1{"Donald", SamplingSpec::greedy(5), 0, 1};
  auto g2 = g1;
  g2.sampling.seed = 99;
  CHECK(cache_key("m", g1) == cache_key("m", g2));
  CHECK(cache_key("m", a).size() == 64);
}

TEST_CASE("corrupt cache files are refetched and rewritten") {
  testing::TempDir dir;
  std::vector<std::string> warnings;
  auto previous = set_log_sink([&](LogLevel level, std::string_view m) {
    if (level == LogLevel::warning) warnings.emplace_back(m);
  });
  GenerationCache cache(dir.path());
  LmClient client(donald_mock(), cache, fast_retry());
  const CompletionRequest req{"Donald", SamplingSpec::greedy(3), 1, 1};
  const auto original = client.complete(req);
  const auto path = cache.path_for(cache_key("mock", req));
  REQUIRE(std::filesystem::exists(path));
  {
    std::ofstream out(path, std::ios::trunc);
    out << "{ not json";
  }
  const auto again = client.complete(req);
  CHECK(again == original);
  CHECK(client.backend_requests() == 2);
  CHECK(warnings.size() == 1);
  REQUIRE(cache.load(cache_key("mock", req)).has_value());
  CHECK(*cache.load(cache_key("mock", req)) == original);
  set_log_sink(previous);
}

TEST_CASE("transport errors are retried with a bounded budget") {
  auto quiet = set_log_sink(nullptr);
  LmClient recovers(std::make_shared<FlakyBackend>(donald_mock(), 2), std::nullopt, fast_retry());
  CHECK(recovers.complete({"Donald", SamplingSpec::greedy(1), 0, 1})[0].text == " Trump");
  CHECK(recovers.backend_requests() == 3);

  LmClient gives_up(std::make_shared<FlakyBackend>(donald_mock(), 5), std::nullopt, fast_retry());
  CHECK_THROWS_AS(gives_up.complete({"Donald", SamplingSpec::greedy(1), 0, 1}), TransportError);
  CHECK(gives_up.backend_requests() == 3);
  set_log_sink(quiet);
}
