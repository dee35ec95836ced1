#include "nameprobe/sentiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/http_json.hpp"
#include "nameprobe/parallel.hpp"
#include "nameprobe/text_util.hpp"
#include "nameprobe/textml.hpp"

namespace nameprobe::sentiment {

using nlohmann::json;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::set<std::string> read_word_list(const std::filesystem::path& path) {
  std::set<std::string> words;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto w = trim(line);
    if (w.empty() || w.front() == '#') continue;
    words.insert(to_lower_ascii(w));
  }
  return words;
}

double checked_probability(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw ProtocolError(std::string("sentiment score lacks '") + key + "'");
  const double v = j.at(key).get<double>();
  if (!(v >= 0.0 && v <= 1.0)) throw ProtocolError(std::string("sentiment '") + key + "' outside [0,1]");
  return v;
}

}  // namespace

LexiconProvider::LexiconProvider(std::set<std::string> negative_words, std::set<std::string> positive_words,
                                 std::string id)
    : negative_(negative_words.begin(), negative_words.end()),
      positive_(positive_words.begin(), positive_words.end()),
      id_(std::move(id)) {
  for (const auto& w : negative_) {
    if (positive_.count(w)) throw ValidationError("lexicon word '" + w + "' is both positive and negative");
  }
}

SentimentScore LexiconProvider::score(std::string_view text) const {
  int balance = 0;
  for (const auto& t : textml::tokenize({}, text)) {
    if (negative_.count(t)) ++balance;
    if (positive_.count(t)) --balance;
  }
  const double neg = sigmoid(static_cast<double>(balance));
  return {neg, 1.0 - neg};
}

std::vector<std::optional<SentimentScore>> LexiconProvider::score_batch(std::span<const std::string> texts) {
  std::vector<std::optional<SentimentScore>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.emplace_back(score(t));
  return out;
}

std::unique_ptr<LexiconProvider> load_lexicon(const std::filesystem::path& dir) {
  const auto neg_text = read_file(dir / "negative.txt");
  const auto pos_text = read_file(dir / "positive.txt");
  const std::string id = "lexicon:" + sha256_hex(neg_text + '\0' + pos_text).substr(0, 12);
  return std::make_unique<LexiconProvider>(read_word_list(dir / "negative.txt"), read_word_list(dir / "positive.txt"),
                                           id);
}

HttpSentimentProvider::HttpSentimentProvider(HttpSentimentEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.base_url.empty()) throw ConfigError("sentiment endpoint needs a base_url");
}

std::string HttpSentimentProvider::provider_id() const {
  return endpoint_.provider_id.empty() ? "http:" + endpoint_.base_url : endpoint_.provider_id;
}

std::vector<std::optional<SentimentScore>> HttpSentimentProvider::score_batch(std::span<const std::string> texts) {
  const json reply = http_post_json(endpoint_.base_url, "/v1/sentiment", sentiment_request_to_json(texts),
                                    endpoint_.timeout_ms, endpoint_.auth_env);
  return sentiment_response_from_json(reply, texts.size());
}

json sentiment_request_to_json(std::span<const std::string> texts) {
  return {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
}

std::vector<std::string> sentiment_request_from_json(const json& body) {
  if (!body.is_object() || !body.contains("texts") || !body.at("texts").is_array()) {
    throw ProtocolError("sentiment request needs a 'texts' array");
  }
  std::vector<std::string> texts;
  for (const auto& t : body.at("texts")) {
    if (!t.is_string()) throw ProtocolError("sentiment texts must be strings");
    texts.push_back(t.get<std::string>());
  }
  return texts;
}

json sentiment_response_to_json(const std::vector<std::optional<SentimentScore>>& scores) {
  json arr = json::array();
  for (const auto& s : scores) {
    if (s) arr.push_back({{"negative", s->negative}, {"positive", s->positive}});
    else arr.push_back(nullptr);
  }
  return {{"scores", arr}};
}

std::vector<std::optional<SentimentScore>> sentiment_response_from_json(const json& body, std::size_t expected) {
  if (!body.is_object() || !body.contains("scores") || !body.at("scores").is_array()) {
    throw ProtocolError("sentiment response needs a 'scores' array");
  }
  const auto& arr = body.at("scores");
  if (arr.size() != expected) throw ProtocolError("sentiment response has the wrong number of scores");
  std::vector<std::optional<SentimentScore>> out;
  for (const auto& s : arr) {
    if (s.is_null()) {
      out.emplace_back(std::nullopt);
      continue;
    }
    if (!s.is_object()) throw ProtocolError("sentiment score must be an object or null");
    SentimentScore score;
    score.negative = checked_probability(s, "negative");
    score.positive = s.contains("positive") ? checked_probability(s, "positive") : 1.0 - score.negative;
    out.emplace_back(score);
  }
  return out;
}

std::vector<std::optional<SentimentScore>> score_texts(SentimentProvider& provider, std::span<const std::string> texts,
                                                       const ScoreOptions& options) {
  if (options.batch_size == 0) throw ValidationError("batch_size must be positive");
  std::vector<std::optional<SentimentScore>> out(texts.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (texts[i].empty()) out[i] = SentimentScore{0.5, 0.5};
    else pending.push_back(i);
  }
  const std::size_t batches = (pending.size() + options.batch_size - 1) / options.batch_size;
  parallel_for(batches, options.workers, [&](std::size_t b) {
    const std::size_t begin = b * options.batch_size;
    const std::size_t end = std::min(pending.size(), begin + options.batch_size);
    std::vector<std::string> batch;
    for (std::size_t k = begin; k < end; ++k) batch.push_back(texts[pending[k]]);
    const auto scores = with_retries(options.retry, [&] { return provider.score_batch(batch); });
    if (scores.size() != batch.size()) throw ProtocolError("provider returned the wrong number of scores");
    for (std::size_t k = begin; k < end; ++k) out[pending[k]] = scores[k - begin];
  });
  return out;
}

SentimentResult aggregate_sentiment(std::string provider_id, std::string model_id, std::vector<EndingSentiment> details) {
  SentimentResult r;
  r.provider_id = std::move(provider_id);
  r.model_id = std::move(model_id);
  std::map<std::string, NameSentiment> by_name;
  std::map<std::string, double> sums;
  for (const auto& d : details) {
    if (d.provider_id != r.provider_id) {
      throw ConfigError("sentiment rows from provider '" + d.provider_id + "' mixed into a '" + r.provider_id +
                        "' ranking");
    }
    auto& row = by_name[d.given_name];
    row.given_name = d.given_name;
    if (!d.negative) {
      ++row.n_skipped;
      continue;
    }
    if (!(*d.negative >= 0.0 && *d.negative <= 1.0)) throw ValidationError("negative score outside [0,1]");
    ++row.n_endings;
    sums[d.given_name] += *d.negative;
  }
  std::vector<double> avgs;
  for (auto& [name, row] : by_name) {
    if (row.n_endings == 0) {
      r.unscored.push_back(name);
      continue;
    }
    row.avg_negative = sums[name] / static_cast<double>(row.n_endings);
    avgs.push_back(row.avg_negative);
    r.ranking.push_back(row);
  }
  std::stable_sort(r.ranking.begin(), r.ranking.end(), [](const NameSentiment& a, const NameSentiment& b) {
    return a.avg_negative != b.avg_negative ? a.avg_negative > b.avg_negative : a.given_name < b.given_name;
  });
  std::tie(r.population_mean, r.population_std) = recovery::mean_std(avgs);
  if (!r.ranking.empty()) {
    const std::size_t k = std::min<std::size_t>(10, r.ranking.size());
    r.spread_most_negative = r.ranking.front().avg_negative - r.ranking[k - 1].avg_negative;
    r.spread_most_positive = r.ranking[r.ranking.size() - k].avg_negative - r.ranking.back().avg_negative;
  }
  r.details = std::move(details);
  return r;
}

SentimentResult rank_names_by_negative(const std::vector<recovery::EndingCorpus>& corpora, SentimentProvider& provider,
                                       const ScoreOptions& options) {
  if (corpora.empty()) throw ValidationError("sentiment ranking needs at least one corpus");
  std::vector<EndingSentiment> details;
  std::vector<std::string> texts;
  for (const auto& c : corpora) {
    if (c.model_id != corpora.front().model_id || c.sampling != corpora.front().sampling) {
      throw ConfigError("corpus for '" + c.given_name + "' was generated with a different model or sampling spec");
    }
    if (c.endings.empty()) throw ValidationError("empty corpus for '" + c.given_name + "'");
    const std::string prompt = c.prompt();
    for (std::size_t i = 0; i < c.endings.size(); ++i) {
      EndingSentiment d;
      d.provider_id = provider.provider_id();
      d.given_name = c.given_name;
      d.index = static_cast<std::uint32_t>(i);
      d.text = prompt + c.endings[i];
      texts.push_back(d.text);
      details.push_back(std::move(d));
    }
  }
  const auto scores = score_texts(provider, texts, options);
  for (std::size_t i = 0; i < details.size(); ++i) {
    if (scores[i]) details[i].negative = scores[i]->negative;
  }
  return aggregate_sentiment(provider.provider_id(), corpora.front().model_id, std::move(details));
}

json to_json(const EndingSentiment& d) {
  json j{{"provider", d.provider_id}, {"given_name", d.given_name}, {"index", d.index}, {"text", d.text}};
  j["negative"] = d.negative ? json(*d.negative) : json(nullptr);
  return j;
}

EndingSentiment ending_sentiment_from_json(const json& j) {
  try {
    EndingSentiment d;
    d.provider_id = j.at("provider").get<std::string>();
    d.given_name = j.at("given_name").get<std::string>();
    d.index = j.at("index").get<std::uint32_t>();
    d.text = j.at("text").get<std::string>();
    if (!j.at("negative").is_null()) d.negative = j.at("negative").get<double>();
    return d;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed sentiment detail row: ") + e.what());
  }
}

}  // namespace nameprobe::sentiment
