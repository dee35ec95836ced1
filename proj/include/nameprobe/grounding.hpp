#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nameprobe/lm_client.hpp"
#include "nameprobe/namebank.hpp"

namespace nameprobe::grounding {

enum class PromptKind { minimal, news, history, informal };

inline constexpr std::array<PromptKind, 4> kAllPromptKinds{PromptKind::minimal, PromptKind::news, PromptKind::history,
                                                           PromptKind::informal};

std::string_view to_string(PromptKind kind);  // "Minimal", "News", ...
PromptKind parse_prompt_kind(std::string_view s);  // case-insensitive
std::string_view template_text(PromptKind kind);

std::string expand_prompt(PromptKind kind, std::string_view given_name);

// True when the continuation, after leading whitespace, starts with the
// surname as a whole word, or with a single-letter initial, a period, an
// optional space and then the surname. Case-insensitive.
bool match_last_name(std::string_view continuation, std::string_view last_name);

enum class EntitySet { news, history };
std::string_view to_string(EntitySet set);
EntitySet parse_entity_set(std::string_view s);

// Surname an entity is checked against in `set`, if it belongs to it.
std::optional<std::string> surname_in(const NameRecord& record, EntitySet set);

struct GroundingDetail {
  std::string given_name;
  std::string surname;
  PromptKind prompt_kind = PromptKind::minimal;
  std::string prompt;
  std::string continuation;
  bool matched = false;
  bool ok = true;  // false when the request failed after retries
  std::string error;

  friend bool operator==(const GroundingDetail&, const GroundingDetail&) = default;
};

struct GroundingCell {
  std::string model_id;
  EntitySet entity_set = EntitySet::news;
  PromptKind prompt_kind = PromptKind::minimal;
  std::uint64_t matched = 0;
  std::uint64_t total = 0;

  double percentage() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(matched) / static_cast<double>(total); }
  friend bool operator==(const GroundingCell&, const GroundingCell&) = default;
};

struct GroundingResult {
  std::string model_id;
  EntitySet entity_set = EntitySet::news;
  std::vector<PromptKind> prompt_kinds;
  std::size_t entity_count = 0;  // entities in the set before exclusions
  std::vector<GroundingCell> cells;  // one per prompt kind, same order
  std::vector<std::string> excluded_entities;  // every request failed
  std::vector<GroundingDetail> details;  // entity-major, prompt order within

  // Mean of the prompt cells' percentages (the "Avg" column).
  double average() const;
};

struct GroundingOptions {
  std::uint32_t rollout_tokens = 5;
  std::size_t workers = 1;
};

GroundingResult run_grounding_probe(lm::LmClient& client, const NameBank& bank, EntitySet entity_set,
                                    const std::vector<PromptKind>& prompt_kinds, const GroundingOptions& options = {});

// Rebuilds cells and exclusions from detail rows alone.
GroundingResult aggregate_grounding(std::string model_id, EntitySet entity_set,
                                    const std::vector<PromptKind>& prompt_kinds, std::vector<GroundingDetail> details);

struct NextWordRow {
  std::string given_name;
  PromptKind prompt_kind = PromptKind::minimal;
  std::string surname;
  std::string top_token;
  double raw_probability = 0.0;         // top token's own mass, percent
  double aggregated_probability = 0.0;  // case/whitespace-merged surname mass, percent
  bool is_surname_match = false;
  std::string disambiguation_rollout;

  // Reported value: aggregated mass for surname matches, raw mass otherwise.
  double top_probability() const { return is_surname_match ? aggregated_probability : raw_probability; }
  friend bool operator==(const NextWordRow&, const NextWordRow&) = default;
};

struct NextWordOptions {
  std::uint32_t top_n = 20;
  std::uint32_t rollout_tokens = 4;
  std::size_t workers = 1;
};

// Records must carry a media surname.
std::vector<NextWordRow> next_word_table(lm::LmClient& client, const std::vector<NameRecord>& records,
                                         const std::vector<PromptKind>& prompt_kinds,
                                         const NextWordOptions& options = {});

nlohmann::json to_json(const GroundingDetail& d);
GroundingDetail grounding_detail_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NextWordRow& r);
NextWordRow next_word_row_from_json(const nlohmann::json& j);

}  // namespace nameprobe::grounding
