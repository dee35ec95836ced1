#include "nameprobe/lm_client.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/http_json.hpp"
#include "nameprobe/logging.hpp"
#include "nameprobe/retry.hpp"
#include "nameprobe/rng.hpp"
#include "nameprobe/text_util.hpp"
#include "nameprobe/wire.hpp"

namespace nameprobe::lm {

using wire::json;

std::string_view to_string(DecodingMode mode) {
  switch (mode) {
    case DecodingMode::greedy:
      return "greedy";
    case DecodingMode::nucleus:
      return "nucleus";
    case DecodingMode::topk:
      return "topk";
  }
  return "?";
}

SamplingSpec SamplingSpec::greedy(std::uint32_t max_tokens) {
  SamplingSpec s;
  s.max_tokens = max_tokens;
  return s;
}

SamplingSpec SamplingSpec::nucleus(double p, std::uint32_t max_tokens, std::uint64_t seed) {
  SamplingSpec s;
  s.mode = DecodingMode::nucleus;
  s.top_p = p;
  s.max_tokens = max_tokens;
  s.seed = seed;
  return s;
}

SamplingSpec SamplingSpec::topk(std::uint32_t k, std::uint32_t max_tokens, std::uint64_t seed) {
  SamplingSpec s;
  s.mode = DecodingMode::topk;
  s.top_k = k;
  s.max_tokens = max_tokens;
  s.seed = seed;
  return s;
}

void SamplingSpec::validate() const {
  if (max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
  if (mode == DecodingMode::nucleus && !(top_p > 0.0 && top_p <= 1.0)) {
    throw ValidationError("nucleus p must be in (0, 1]");
  }
  if (mode == DecodingMode::topk && top_k < 1) throw ValidationError("top-k k must be >= 1");
}

std::string SamplingSpec::label() const {
  std::ostringstream out;
  switch (mode) {
    case DecodingMode::greedy:
      out << "greedy";
      break;
    case DecodingMode::nucleus:
      out << "nucleus(p=" << top_p << ")";
      break;
    case DecodingMode::topk:
      out << "topk(k=" << top_k << ")";
      break;
  }
  return out.str();
}

void CompletionRequest::validate() const {
  sampling.validate();
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (logprob_top_n > kMaxLogprobTopN) {
    throw ValidationError("logprob_top_n exceeds protocol maximum of " + std::to_string(kMaxLogprobTopN));
  }
}

void Completion::validate() const {
  std::string joined;
  for (const auto& t : tokens) {
    if (!std::isfinite(t.logprob) || t.logprob > 1e-6) throw ProtocolError("token logprob out of range");
    for (std::size_t i = 1; i < t.top_alternatives.size(); ++i) {
      if (t.top_alternatives[i].logprob > t.top_alternatives[i - 1].logprob) {
        throw ProtocolError("top alternatives not sorted");
      }
    }
    joined += t.token;
  }
  if (joined != text) throw ProtocolError("token strings do not reconstruct completion text");
}

// ---------------------------------------------------------------------------
// Mock model

namespace {

using Distribution = std::vector<std::pair<std::string, double>>;

Distribution sorted_distribution(const std::map<std::string, double>& dist) {
  Distribution out(dist.begin(), dist.end());
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

std::string surface(const std::string& word) {
  if (word.empty() || is_space(word.front())) return word;
  if (word.size() == 1 && !is_word_byte(static_cast<unsigned char>(word[0]))) return word;
  return " " + word;
}

// Splits text into whitespace-prefixed words and single punctuation bytes.
std::vector<std::string> split_surface_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && is_space(text[i])) ++i;
    if (i == text.size()) break;
    if (is_word_byte(static_cast<unsigned char>(text[i]))) {
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    } else {
      ++i;
    }
    out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

std::size_t choose(const Distribution& dist, const SamplingSpec& sampling, Rng* rng) {
  if (sampling.mode == DecodingMode::greedy || dist.size() == 1) return 0;
  std::size_t keep = dist.size();
  if (sampling.mode == DecodingMode::topk) {
    keep = std::min<std::size_t>(keep, sampling.top_k);
  } else {
    double cumulative = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      cumulative += dist[i].second;
      if (cumulative >= sampling.top_p - 1e-12) {
        keep = i + 1;
        break;
      }
    }
  }
  double mass = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mass += dist[i].second;
  double u = rng->uniform() * mass;
  for (std::size_t i = 0; i < keep; ++i) {
    u -= dist[i].second;
    if (u < 0.0) return i;
  }
  return keep - 1;
}

TokenLogprob make_token(const Distribution& dist, std::size_t chosen, std::uint32_t top_n) {
  TokenLogprob t{surface(dist[chosen].first), std::log(dist[chosen].second), {}};
  for (std::size_t i = 0; i < dist.size() && i < top_n; ++i) {
    t.top_alternatives.push_back({surface(dist[i].first), std::log(dist[i].second)});
  }
  return t;
}

}  // namespace

void MockRule::validate() const {
  if (next_token_distribution.empty()) throw ValidationError("mock rule has an empty distribution");
  double total = 0.0;
  for (const auto& [token, p] : next_token_distribution) {
    if (token.empty()) throw ValidationError("mock rule has an empty token");
    if (!(p > 0.0 && p <= 1.0)) throw ValidationError("mock probability out of (0,1] for '" + token + "'");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("mock distribution does not sum to 1");
}

MockModel::MockModel(std::string model_id, std::vector<MockRule> rules, MockRule fallback)
    : model_id_(std::move(model_id)), rules_(std::move(rules)), fallback_(std::move(fallback)) {
  for (const auto& r : rules_) r.validate();
  fallback_.validate();
}

const MockRule& MockModel::rule_for(std::string_view prompt) const {
  const MockRule* best = &fallback_;
  std::size_t best_len = 0;
  bool found = false;
  for (const auto& r : rules_) {
    const auto& pat = r.prompt_suffix_pattern;
    if (pat.size() > prompt.size() || prompt.substr(prompt.size() - pat.size()) != pat) continue;
    if (!found || pat.size() > best_len) {
      best = &r;
      best_len = pat.size();
      found = true;
    }
  }
  return *best;
}

std::vector<Completion> MockModel::complete(const CompletionRequest& request) {
  request.validate();
  const MockRule& rule = rule_for(request.prompt);
  const Distribution dist = sorted_distribution(rule.next_token_distribution);
  const auto continuation = split_surface_tokens(rule.continuation);
  const std::uint32_t top_n = request.logprob_top_n;

  std::vector<Completion> out;
  out.reserve(request.n_samples);
  for (std::uint32_t j = 0; j < request.n_samples; ++j) {
    Rng rng(derive_seed(request.sampling.seed, j));
    Completion c;
    c.model_id = model_id_;
    c.tokens.push_back(make_token(dist, choose(dist, request.sampling, &rng), top_n));
    std::size_t next_cont = 0;
    while (c.tokens.size() < request.sampling.max_tokens) {
      if (!continuation.empty()) {
        if (next_cont == continuation.size()) {
          c.finish_reason = FinishReason::stop;
          break;
        }
        TokenLogprob t{continuation[next_cont++], 0.0, {}};
        if (top_n > 0) t.top_alternatives.push_back({t.token, 0.0});
        c.tokens.push_back(std::move(t));
      } else {
        c.tokens.push_back(make_token(dist, choose(dist, request.sampling, &rng), top_n));
      }
    }
    if (c.finish_reason != FinishReason::stop && !continuation.empty() && next_cont == continuation.size()) {
      c.finish_reason = FinishReason::stop;
    }
    for (const auto& t : c.tokens) c.text += t.token;
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP backend

HttpCompletionBackend::HttpCompletionBackend(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.base_url.empty()) throw ConfigError("completion endpoint base_url is empty");
}

std::vector<Completion> HttpCompletionBackend::complete(const CompletionRequest& request) {
  request.validate();
  const json body = wire::completion_request_to_json(endpoint_.model_id, request);
  const json response = http_post_json(endpoint_.base_url, "/v1/completions", body, endpoint_.timeout_ms,
                                       endpoint_.auth_env);
  if (request.sampling.is_sampled() && !response.contains("seed") && !warned_unseeded_.exchange(true)) {
    log_warning("endpoint " + endpoint_.base_url + " did not echo the seed; sampled results may not be reproducible");
  }
  auto completions = wire::completions_from_json(response);
  if (completions.size() != request.n_samples) {
    throw ProtocolError("expected " + std::to_string(request.n_samples) + " choices, got " +
                        std::to_string(completions.size()));
  }
  return completions;
}

// ---------------------------------------------------------------------------
// Cache

GenerationCache::GenerationCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path GenerationCache::path_for(const std::string& key) const { return dir_ / (key + ".json"); }

std::optional<std::vector<Completion>> GenerationCache::load(const std::string& key) const {
  const auto path = path_for(key);
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const json blob = json::parse(in);
    if (blob.at("key").get<std::string>() != key || blob.at("protocol").get<int>() != kProtocolVersion) {
      throw ProtocolError("key/protocol mismatch");
    }
    std::vector<Completion> out;
    const auto model_id = blob.at("model").get<std::string>();
    for (const auto& c : blob.at("completions")) out.push_back(wire::completion_from_json(c, model_id));
    return out;
  } catch (const std::exception& e) {
    log_warning("ignoring corrupt cache entry " + path.string() + ": " + e.what());
    return std::nullopt;
  }
}

void GenerationCache::store(const std::string& key, const std::vector<Completion>& completions) const {
  json items = json::array();
  for (const auto& c : completions) items.push_back(wire::completion_to_json(c));
  const json blob = {{"key", key},
                     {"protocol", kProtocolVersion},
                     {"model", completions.empty() ? std::string() : completions.front().model_id},
                     {"completions", items}};
  write_file_atomic(path_for(key), blob.dump());
}

std::string cache_key(std::string_view model_id, const CompletionRequest& request) {
  const auto& s = request.sampling;
  json material = {{"protocol", kProtocolVersion},
                   {"model", model_id},
                   {"prompt", request.prompt},
                   {"mode", to_string(s.mode)},
                   {"max_tokens", s.max_tokens},
                   {"n", request.n_samples},
                   {"logprobs", request.logprob_top_n}};
  if (s.mode == DecodingMode::nucleus) material["top_p"] = s.top_p;
  if (s.mode == DecodingMode::topk) material["top_k"] = s.top_k;
  if (s.is_sampled()) material["seed"] = s.seed;
  return sha256_hex(material.dump());
}

// ---------------------------------------------------------------------------
// Client

LmClient::LmClient(std::shared_ptr<CompletionBackend> backend, std::optional<GenerationCache> cache,
                   RetryPolicy retry, std::size_t parallelism)
    : backend_(std::move(backend)),
      cache_(std::move(cache)),
      retry_(retry),
      parallelism_(std::clamp<std::size_t>(parallelism, 1, 1024)),
      in_flight_(std::make_unique<std::counting_semaphore<1024>>(static_cast<std::ptrdiff_t>(parallelism_))) {
  if (!backend_) throw ConfigError("LmClient needs a backend");
  if (retry_.attempts < 1) retry_.attempts = 1;
}

std::vector<Completion> LmClient::fetch_with_retries(const CompletionRequest& request) {
  return with_retries(retry_, [&] {
    in_flight_->acquire();
    struct Release {
      std::counting_semaphore<1024>* s;
      ~Release() { s->release(); }
    } release{in_flight_.get()};
    backend_requests_.fetch_add(1);
    auto completions = backend_->complete(request);
    if (completions.size() != request.n_samples) throw ProtocolError("backend returned wrong number of samples");
    for (const auto& c : completions) c.validate();
    return completions;
  });
}

std::vector<Completion> LmClient::complete(const CompletionRequest& request) {
  request.validate();
  if (!cache_) return fetch_with_retries(request);
  const auto key = cache_key(backend_->model_id(), request);
  if (auto hit = cache_->load(key); hit && hit->size() == request.n_samples) {
    cache_hits_.fetch_add(1);
    return *std::move(hit);
  }
  auto completions = fetch_with_retries(request);
  cache_->store(key, completions);
  return completions;
}

std::vector<std::pair<std::string, double>> LmClient::next_token_distribution(const std::string& prompt,
                                                                              std::uint32_t top_n) {
  if (top_n < 1) throw ValidationError("top_n must be >= 1");
  CompletionRequest request{prompt, SamplingSpec::greedy(1), top_n, 1};
  const auto completions = complete(request);
  if (completions.front().tokens.empty()) throw ProtocolError("completion has no tokens");
  std::vector<std::pair<std::string, double>> merged;
  for (const auto& alt : completions.front().tokens.front().top_alternatives) {
    const std::string token(trim_left(alt.token));
    const double p = std::exp(alt.logprob);
    auto it = std::find_if(merged.begin(), merged.end(), [&](const auto& e) { return e.first == token; });
    if (it == merged.end()) {
      merged.emplace_back(token, p);
    } else {
      it->second += p;
    }
  }
  std::stable_sort(merged.begin(), merged.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (merged.size() > top_n) merged.resize(top_n);
  return merged;
}

std::string LmClient::sample_ending(const std::string& prompt, const SamplingSpec& sampling, std::uint32_t index) {
  if (!sampling.is_sampled()) throw ValidationError("sample_endings requires nucleus or top-k sampling");
  CompletionRequest request{prompt, sampling, 0, 1};
  request.sampling.seed = derive_seed(sampling.seed, index);
  auto completions = complete(request);
  std::string text = std::move(completions.front().text);
  // Some servers echo the prompt; endings are continuation text only.
  if (!prompt.empty() && text.compare(0, prompt.size(), prompt) == 0) text.erase(0, prompt.size());
  return text;
}

std::vector<std::string> LmClient::sample_endings(const std::string& prompt, const SamplingSpec& sampling,
                                                  std::uint32_t count) {
  if (count < 1) throw ValidationError("count must be >= 1");
  if (!sampling.is_sampled()) throw ValidationError("sample_endings requires nucleus or top-k sampling");
  sampling.validate();
  std::vector<std::string> endings(count);
  for (std::uint32_t i = 0; i < count; ++i) endings[i] = sample_ending(prompt, sampling, i);
  return endings;
}

}  // namespace nameprobe::lm
