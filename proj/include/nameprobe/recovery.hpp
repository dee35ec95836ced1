#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nameprobe/lm_client.hpp"
#include "nameprobe/namebank.hpp"
#include "nameprobe/textml.hpp"

namespace nameprobe::recovery {

inline constexpr std::string_view kTemplate = "[NAME] is a";
inline constexpr std::string_view kPlaceholder = "«NAME»";

std::string expand_recovery_prompt(std::string_view given_name);

struct EndingCorpus {
  std::string given_name;
  std::string model_id;
  lm::SamplingSpec sampling;
  std::string template_text{kTemplate};
  std::vector<std::string> endings;  // continuation text only

  std::string prompt() const;
  friend bool operator==(const EndingCorpus&, const EndingCorpus&) = default;
};

// Sampling must be nucleus or topk; count >= 1.
EndingCorpus build_corpus(lm::LmClient& client, const std::string& given_name, const lm::SamplingSpec& sampling,
                          std::uint32_t count);

// One corpus per name, generated with a shared worker pool. Output follows
// `names` order.
std::vector<EndingCorpus> build_corpora(lm::LmClient& client, const std::vector<std::string>& names,
                                        const lm::SamplingSpec& sampling, std::uint32_t count, std::size_t workers);

// Replaces every whole-word, case-insensitive occurrence of any of `names`
// with the placeholder. Longer names win where they overlap.
class NameScrubber {
 public:
  explicit NameScrubber(const std::vector<std::string>& names);
  std::string scrub(std::string_view text) const;
  EndingCorpus scrub(const EndingCorpus& corpus) const;

 private:
  // Lower-cased first word -> lower-cased full names, longest first.
  std::map<std::string, std::vector<std::string>, std::less<>> by_first_word_;
};

EndingCorpus scrub_names(const EndingCorpus& corpus, const std::vector<std::string>& names);

// Every given name in the bank, plus surnames when asked.
std::vector<std::string> scrub_vocabulary(const NameBank& bank, bool include_surnames);

// Tokenizer used for recovery features: the placeholder is stop-listed.
textml::TokenizerConfig recovery_tokenizer();

struct PairScore {
  std::string a;  // a < b
  std::string b;
  double f1 = 0.0;
  friend bool operator==(const PairScore&, const PairScore&) = default;
};

struct RecoveryScore {
  std::string given_name;
  double mean_pairwise_f1 = 0.0;
  std::map<std::string, double> per_pair;  // partner -> F1
  std::size_t n_pairs = 0;
  friend bool operator==(const RecoveryScore&, const RecoveryScore&) = default;
};

struct RecoveryOptions {
  textml::CvPlan plan{};
  textml::SvmConfig svm{};
  bool scrub_surnames = false;
  std::size_t workers = 1;
};

struct RecoveryResult {
  std::string model_id;
  lm::SamplingSpec sampling;
  std::vector<RecoveryScore> scores;  // descending mean, ties by name
  std::vector<PairScore> pairs;       // sorted by (a, b)
  double population_mean = 0.0;
  double population_std = 0.0;  // population (ddof = 0)
};

// Scores every same-gender pair among the corpora's names. All corpora must
// share model and sampling (ConfigError otherwise) and every name must be in
// the bank; a gender present with a single name is a ValidationError.
RecoveryResult recovery_scores(const std::vector<EndingCorpus>& corpora, const NameBank& bank,
                               const RecoveryOptions& options = {});

// Rebuilds per-name means, ranking and population statistics from pairs.
RecoveryResult aggregate_recovery(std::string model_id, lm::SamplingSpec sampling, std::vector<PairScore> pairs);

// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& values);

nlohmann::json to_json(const EndingCorpus& corpus);
EndingCorpus corpus_from_json(const nlohmann::json& j);
// "<name>-<12 hex chars of the model+sampling hash>.json"
std::string corpus_file_name(const EndingCorpus& corpus);
void save_corpus(const std::filesystem::path& dir, const EndingCorpus& corpus);
EndingCorpus load_corpus(const std::filesystem::path& path);

nlohmann::json to_json(const PairScore& p);
PairScore pair_score_from_json(const nlohmann::json& j);

}  // namespace nameprobe::recovery
