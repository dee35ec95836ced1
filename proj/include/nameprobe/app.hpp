#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nameprobe/grounding.hpp"
#include "nameprobe/lm_client.hpp"
#include "nameprobe/sentiment.hpp"
#include "nameprobe/swap.hpp"
#include "nameprobe/textml.hpp"

namespace nameprobe::app {

inline constexpr const char* kProbeNames[] = {"grounding", "recovery", "sentiment", "swap"};

struct GroundingConfig {
  std::vector<grounding::EntitySet> entity_sets{grounding::EntitySet::news, grounding::EntitySet::history};
  std::vector<grounding::PromptKind> prompts{grounding::kAllPromptKinds.begin(), grounding::kAllPromptKinds.end()};
  std::uint32_t rollout_tokens = 5;
  bool next_word = true;
  std::vector<std::string> next_word_names;  // empty: names with a media frequency
  std::vector<grounding::PromptKind> next_word_prompts{grounding::PromptKind::minimal, grounding::PromptKind::news};
  std::uint32_t top_n = 20;
};

struct CorporaConfig {
  lm::SamplingSpec sampling = lm::SamplingSpec::nucleus(0.9, 150, 1);
  std::uint32_t endings = 50;
  std::vector<std::string> names;  // empty: every recovery_sentiment name
};

struct RecoveryConfig {
  textml::CvPlan plan{5, 1, true};
  textml::SvmConfig svm{1e-4, 20, 2};
  bool scrub_surnames = false;
};

struct SentimentConfig {
  std::string kind = "lexicon";  // "lexicon" or "http"
  std::filesystem::path lexicon_dir;
  sentiment::HttpSentimentEndpoint http;
  std::size_t batch_size = 32;
};

struct SwapConfig {
  std::optional<swap::HttpQaEndpoint> qa;
  std::filesystem::path templates;
  std::uint64_t pair_budget = 0;
  std::uint64_t seed = 3;
};

struct AuditConfig {
  std::filesystem::path namebank;
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  std::size_t parallelism = 4;
  std::optional<lm::HttpEndpoint> model;
  std::vector<std::string> probes{std::begin(kProbeNames), std::end(kProbeNames)};
  GroundingConfig grounding;
  CorporaConfig corpora;
  RecoveryConfig recovery;
  SentimentConfig sentiment;
  SwapConfig swap;
};

// Relative paths resolve against `base_dir`. Unknown keys, wrong types and
// invalid values raise ConfigError.
AuditConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
AuditConfig load_config(const std::filesystem::path& path);

// Checks that files exist and every requested probe has its endpoints
// (unless mocked). Never touches the network. ConfigError on failure.
void validate_config(const AuditConfig& config, const std::vector<std::string>& probes, bool mock);

// Probes a subcommand runs: one probe, or the configured selection for "all".
std::vector<std::string> probes_for(const std::string& subcommand, const AuditConfig& config);

enum ExitCode : int { kSuccess = 0, kProbeFailure = 1, kConfigError = 2 };

struct RunOptions {
  bool mock = false;
  bool force = false;  // recompute even when the run is already complete
};

struct RunResult {
  int exit_code = kSuccess;
  std::filesystem::path run_dir;
  std::vector<std::string> failures;
};

// Canonical description of what the run computes; the run id hashes it.
nlohmann::json canonical_config(const AuditConfig& config, const std::vector<std::string>& probes, bool mock);

// Executes the probes into <output_dir>/<run id prefix>/. Config errors
// surface as exit 2 before any request is made.
RunResult run(const AuditConfig& config, const std::vector<std::string>& probes, const RunOptions& options);

struct VerifyResult {
  bool ok = true;
  std::vector<std::string> findings;
};

// Recomputes every aggregate and table of a run from its detail rows.
VerifyResult verify_run(const std::filesystem::path& run_dir);

}  // namespace nameprobe::app
