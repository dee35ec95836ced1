#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nameprobe/lm_client.hpp"
#include "nameprobe/recovery.hpp"
#include "nameprobe/retry.hpp"

namespace nameprobe::sentiment {

struct SentimentScore {
  double negative = 0.5;
  double positive = 0.5;
  friend bool operator==(const SentimentScore&, const SentimentScore&) = default;
};

// Scores a batch of texts. A nullopt entry marks a text the provider could
// not score; it is skipped downstream, never counted as zero.
class SentimentProvider {
 public:
  virtual ~SentimentProvider() = default;
  virtual std::string provider_id() const = 0;
  virtual std::vector<std::optional<SentimentScore>> score_batch(std::span<const std::string> texts) = 0;
};

// Bag-of-words scorer: negative = sigmoid(neg_hits - pos_hits) over the
// textml tokenizer's tokens.
class LexiconProvider : public SentimentProvider {
 public:
  LexiconProvider(std::set<std::string> negative_words, std::set<std::string> positive_words,
                  std::string id = "lexicon");
  std::string provider_id() const override { return id_; }
  std::vector<std::optional<SentimentScore>> score_batch(std::span<const std::string> texts) override;
  SentimentScore score(std::string_view text) const;

 private:
  std::set<std::string, std::less<>> negative_;
  std::set<std::string, std::less<>> positive_;
  std::string id_;
};

// Reads negative.txt and positive.txt from `dir` (one word per line, '#'
// comments). The provider id embeds a hash of both lists.
std::unique_ptr<LexiconProvider> load_lexicon(const std::filesystem::path& dir);

struct HttpSentimentEndpoint {
  std::string base_url;
  std::string provider_id;  // defaults to "http:" + base_url
  int timeout_ms = 30000;
  std::string auth_env = "NAMEPROBE_API_TOKEN";
};

// POST <base>/v1/sentiment {"texts": [...]} -> {"scores": [{"negative", "positive"} | null]}
class HttpSentimentProvider : public SentimentProvider {
 public:
  explicit HttpSentimentProvider(HttpSentimentEndpoint endpoint);
  std::string provider_id() const override;
  std::vector<std::optional<SentimentScore>> score_batch(std::span<const std::string> texts) override;

 private:
  HttpSentimentEndpoint endpoint_;
};

// Wire helpers shared with the reference server.
nlohmann::json sentiment_request_to_json(std::span<const std::string> texts);
std::vector<std::string> sentiment_request_from_json(const nlohmann::json& body);
nlohmann::json sentiment_response_to_json(const std::vector<std::optional<SentimentScore>>& scores);
std::vector<std::optional<SentimentScore>> sentiment_response_from_json(const nlohmann::json& body,
                                                                        std::size_t expected);

struct ScoreOptions {
  std::size_t batch_size = 32;
  std::size_t workers = 1;
  RetryPolicy retry{};
};

// Order-preserving; empty texts score 0.5 without a provider call.
std::vector<std::optional<SentimentScore>> score_texts(SentimentProvider& provider, std::span<const std::string> texts,
                                                       const ScoreOptions& options = {});

struct EndingSentiment {
  std::string provider_id;
  std::string given_name;
  std::uint32_t index = 0;
  std::string text;  // prompt + ending, as scored
  std::optional<double> negative;  // nullopt when skipped
  friend bool operator==(const EndingSentiment&, const EndingSentiment&) = default;
};

struct NameSentiment {
  std::string given_name;
  double avg_negative = 0.0;
  std::size_t n_endings = 0;  // scored endings
  std::size_t n_skipped = 0;
  friend bool operator==(const NameSentiment&, const NameSentiment&) = default;
};

struct SentimentResult {
  std::string provider_id;
  std::string model_id;
  std::vector<NameSentiment> ranking;  // descending avg_negative, ties by name
  std::vector<std::string> unscored;   // names with no scored ending, not ranked
  double population_mean = 0.0;
  double population_std = 0.0;
  // Range of avg_negative over the ten most negative and ten least negative names.
  double spread_most_negative = 0.0;
  double spread_most_positive = 0.0;
  std::vector<EndingSentiment> details;
};

SentimentResult rank_names_by_negative(const std::vector<recovery::EndingCorpus>& corpora, SentimentProvider& provider,
                                       const ScoreOptions& options = {});

// Rebuilds the ranking and statistics from detail rows. Rows from another
// provider are a ConfigError: scores from different providers never share a
// ranking.
SentimentResult aggregate_sentiment(std::string provider_id, std::string model_id,
                                    std::vector<EndingSentiment> details);

nlohmann::json to_json(const EndingSentiment& d);
EndingSentiment ending_sentiment_from_json(const nlohmann::json& j);

}  // namespace nameprobe::sentiment
