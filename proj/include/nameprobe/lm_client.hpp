#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nameprobe/retry.hpp"

namespace nameprobe::lm {

// Bumped whenever cached payloads or the wire format change meaning.
inline constexpr int kProtocolVersion = 1;
// Largest number of per-position alternatives a request may ask for.
inline constexpr std::uint32_t kMaxLogprobTopN = 100;

enum class DecodingMode { greedy, nucleus, topk };

std::string_view to_string(DecodingMode mode);

struct SamplingSpec {
  DecodingMode mode = DecodingMode::greedy;
  double top_p = 1.0;       // nucleus only, in (0, 1]
  std::uint32_t top_k = 0;  // topk only, >= 1
  std::uint32_t max_tokens = 1;
  std::uint64_t seed = 0;

  static SamplingSpec greedy(std::uint32_t max_tokens);
  static SamplingSpec nucleus(double p, std::uint32_t max_tokens, std::uint64_t seed);
  static SamplingSpec topk(std::uint32_t k, std::uint32_t max_tokens, std::uint64_t seed);

  bool is_sampled() const { return mode != DecodingMode::greedy; }
  // Throws ValidationError.
  void validate() const;
  // Short label such as "nucleus(p=0.9)" or "topk(k=25)".
  std::string label() const;

  friend bool operator==(const SamplingSpec&, const SamplingSpec&) = default;
};

struct CompletionRequest {
  std::string prompt;
  SamplingSpec sampling;
  std::uint32_t logprob_top_n = 0;
  std::uint32_t n_samples = 1;

  void validate() const;
};

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;
  friend bool operator==(const TokenAlternative&, const TokenAlternative&) = default;
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  // Sorted by descending logprob.
  std::vector<TokenAlternative> top_alternatives;
  friend bool operator==(const TokenLogprob&, const TokenLogprob&) = default;
};

enum class FinishReason { length, stop };

struct Completion {
  std::string text;
  std::vector<TokenLogprob> tokens;
  std::string model_id;
  FinishReason finish_reason = FinishReason::length;

  // Throws ProtocolError when token strings do not concatenate to `text`
  // or a logprob is out of range.
  void validate() const;
  friend bool operator==(const Completion&, const Completion&) = default;
};

// One wire-level round trip to a model. Implementations must be thread-safe.
class CompletionBackend {
 public:
  virtual ~CompletionBackend() = default;
  virtual std::string model_id() const = 0;
  // Exactly request.n_samples completions. Sample j of a sampled request is
  // drawn with sub-seed derive_seed(request.sampling.seed, j).
  virtual std::vector<Completion> complete(const CompletionRequest& request) = 0;
};

// Scripted word-level model used for offline runs and as a test oracle.
//
// The rule whose prompt_suffix_pattern is the longest suffix of the prompt is
// active. The first generated word is drawn from next_token_distribution
// under the request's decoding mode. If the rule has a continuation, it is
// emitted verbatim afterwards and generation stops when it runs out;
// otherwise every later word is drawn independently from the same
// distribution. Words are emitted with a leading space, except single
// punctuation characters.
struct MockRule {
  std::string prompt_suffix_pattern;
  std::map<std::string, double> next_token_distribution;
  std::string continuation;

  void validate() const;
};

class MockModel : public CompletionBackend {
 public:
  explicit MockModel(std::string model_id, std::vector<MockRule> rules = {},
                     MockRule fallback = MockRule{"", {{".", 1.0}}, ""});

  std::string model_id() const override { return model_id_; }
  std::vector<Completion> complete(const CompletionRequest& request) override;

  const MockRule& rule_for(std::string_view prompt) const;

 private:
  std::string model_id_;
  std::vector<MockRule> rules_;
  MockRule fallback_;
};

struct HttpEndpoint {
  std::string base_url;  // e.g. http://127.0.0.1:8000 (path prefix allowed)
  std::string model_id;
  int timeout_ms = 60000;
  // Name of the environment variable holding a bearer token; unset/empty
  // variable means no Authorization header.
  std::string auth_env = "NAMEPROBE_API_TOKEN";
};

// POSTs to <base_url>/v1/completions using the JSON wire format in wire.hpp.
class HttpCompletionBackend : public CompletionBackend {
 public:
  explicit HttpCompletionBackend(HttpEndpoint endpoint);
  std::string model_id() const override { return endpoint_.model_id; }
  std::vector<Completion> complete(const CompletionRequest& request) override;

 private:
  HttpEndpoint endpoint_;
  std::atomic<bool> warned_unseeded_{false};
};

// Content-addressed store: <dir>/<key>.json, one JSON blob per key. Unreadable
// or mismatching blobs are treated as misses. Writes go through a temp file
// and rename, so concurrent writers of one key leave one complete blob.
class GenerationCache {
 public:
  explicit GenerationCache(std::filesystem::path dir);

  std::optional<std::vector<Completion>> load(const std::string& key) const;
  void store(const std::string& key, const std::vector<Completion>& completions) const;
  std::filesystem::path path_for(const std::string& key) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

// sha256 over (protocol version, model id, prompt, decoding spec, n, top_n).
// The seed only participates for sampled modes.
std::string cache_key(std::string_view model_id, const CompletionRequest& request);

using nameprobe::RetryPolicy;

// Shareable front end over a backend: validation, cache, retries, and a bound
// on concurrent in-flight backend calls.
class LmClient {
 public:
  LmClient(std::shared_ptr<CompletionBackend> backend, std::optional<GenerationCache> cache = std::nullopt,
           RetryPolicy retry = {}, std::size_t parallelism = 1);

  std::string model_id() const { return backend_->model_id(); }
  std::size_t parallelism() const { return parallelism_; }

  std::vector<Completion> complete(const CompletionRequest& request);

  // Top alternatives for the next token, leading whitespace stripped and
  // identical strings merged. Descending probability, ties by token.
  std::vector<std::pair<std::string, double>> next_token_distribution(const std::string& prompt,
                                                                      std::uint32_t top_n);

  // `count` sampled continuations; ending i uses seed derive_seed(seed, i)
  // and is fetched (and cached) on its own.
  std::vector<std::string> sample_endings(const std::string& prompt, const SamplingSpec& sampling,
                                          std::uint32_t count);
  std::string sample_ending(const std::string& prompt, const SamplingSpec& sampling, std::uint32_t index);

  // Backend round trips performed so far (cache hits excluded).
  std::uint64_t backend_requests() const { return backend_requests_.load(); }
  std::uint64_t cache_hits() const { return cache_hits_.load(); }

 private:
  std::vector<Completion> fetch_with_retries(const CompletionRequest& request);

  std::shared_ptr<CompletionBackend> backend_;
  std::optional<GenerationCache> cache_;
  RetryPolicy retry_;
  std::size_t parallelism_;
  std::unique_ptr<std::counting_semaphore<1024>> in_flight_;
  std::atomic<std::uint64_t> backend_requests_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

}  // namespace nameprobe::lm
