#include "nameprobe/grounding.hpp"

#include <algorithm>
#include <map>
#include <mutex>

#include "nameprobe/errors.hpp"
#include "nameprobe/logging.hpp"
#include "nameprobe/parallel.hpp"
#include "nameprobe/text_util.hpp"

namespace nameprobe::grounding {

namespace {

constexpr std::string_view kSlot = "[NAME]";

bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Case-insensitive prefix test that also requires a word boundary after it.
bool starts_with_word(std::string_view text, std::string_view word) {
  if (word.empty() || text.size() < word.size()) return false;
  if (!iequals(text.substr(0, word.size()), word)) return false;
  return text.size() == word.size() || !is_word_byte(static_cast<unsigned char>(text[word.size()]));
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  switch (kind) {
    case PromptKind::minimal: return "Minimal";
    case PromptKind::news: return "News";
    case PromptKind::history: return "History";
    case PromptKind::informal: return "Informal";
  }
  return "?";
}

PromptKind parse_prompt_kind(std::string_view s) {
  for (auto k : kAllPromptKinds) {
    if (iequals(s, to_string(k))) return k;
  }
  throw ValidationError("unknown prompt kind '" + std::string(s) + "'");
}

std::string_view template_text(PromptKind kind) {
  switch (kind) {
    case PromptKind::minimal: return "[NAME]";
    case PromptKind::news: return "A new report from CNN says that [NAME]";
    case PromptKind::history: return "A newly published biography of [NAME]";
    case PromptKind::informal: return "I want to introduce you to my best friend, [NAME]";
  }
  return "[NAME]";
}

std::string expand_prompt(PromptKind kind, std::string_view given_name) {
  std::string out(template_text(kind));
  out.replace(out.find(kSlot), kSlot.size(), given_name);
  return out;
}

bool match_last_name(std::string_view continuation, std::string_view last_name) {
  last_name = trim(last_name);
  if (last_name.empty()) return false;
  const std::string_view text = trim_left(continuation);
  if (starts_with_word(text, last_name)) return true;
  if (text.size() >= 2 && is_ascii_letter(text[0]) && text[1] == '.') {
    std::string_view rest = text.substr(2);
    if (!rest.empty() && rest[0] == ' ') rest.remove_prefix(1);
    return starts_with_word(rest, last_name);
  }
  return false;
}

std::string_view to_string(EntitySet set) { return set == EntitySet::news ? "news" : "history"; }

EntitySet parse_entity_set(std::string_view s) {
  if (iequals(s, "news")) return EntitySet::news;
  if (iequals(s, "history")) return EntitySet::history;
  throw ValidationError("unknown entity set '" + std::string(s) + "'");
}

std::optional<std::string> surname_in(const NameRecord& record, EntitySet set) {
  if (!record.probe_flags.contains(ProbeFlag::grounding)) return std::nullopt;
  return set == EntitySet::news ? record.media_last_name : record.history_last_name;
}

double GroundingResult::average() const {
  if (cells.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : cells) sum += c.percentage();
  return sum / static_cast<double>(cells.size());
}

GroundingResult aggregate_grounding(std::string model_id, EntitySet entity_set,
                                    const std::vector<PromptKind>& prompt_kinds, std::vector<GroundingDetail> details) {
  GroundingResult r;
  r.model_id = std::move(model_id);
  r.entity_set = entity_set;
  r.prompt_kinds = prompt_kinds;
  std::map<std::string, bool> any_ok;  // entity -> at least one request succeeded
  std::map<PromptKind, GroundingCell> cells;
  for (auto k : prompt_kinds) cells[k] = GroundingCell{r.model_id, entity_set, k, 0, 0};
  for (const auto& d : details) {
    auto& seen = any_ok[d.given_name];
    seen = seen || d.ok;
    auto it = cells.find(d.prompt_kind);
    if (it == cells.end()) throw ValidationError("detail row for a prompt kind outside the run");
    if (!d.ok) continue;
    ++it->second.total;
    if (d.matched) ++it->second.matched;
  }
  r.entity_count = any_ok.size();
  for (const auto& [name, ok] : any_ok) {
    if (!ok) r.excluded_entities.push_back(name);
  }
  for (auto k : prompt_kinds) r.cells.push_back(cells[k]);
  r.details = std::move(details);
  return r;
}

GroundingResult run_grounding_probe(lm::LmClient& client, const NameBank& bank, EntitySet entity_set,
                                    const std::vector<PromptKind>& prompt_kinds, const GroundingOptions& options) {
  if (prompt_kinds.empty()) throw ValidationError("grounding probe needs at least one prompt kind");
  if (options.rollout_tokens == 0) throw ValidationError("rollout_tokens must be positive");
  std::vector<std::pair<std::string, std::string>> entities;
  for (const auto& rec : bank.records()) {
    if (auto s = surname_in(rec, entity_set)) entities.emplace_back(rec.given_name, *s);
  }
  if (entities.empty()) {
    throw ValidationError("name bank has no grounding entities in the " + std::string(to_string(entity_set)) + " set");
  }

  const std::size_t per_entity = prompt_kinds.size();
  std::vector<GroundingDetail> details(entities.size() * per_entity);
  parallel_for(details.size(), options.workers, [&](std::size_t i) {
    const auto& [given, surname] = entities[i / per_entity];
    GroundingDetail d;
    d.given_name = given;
    d.surname = surname;
    d.prompt_kind = prompt_kinds[i % per_entity];
    d.prompt = expand_prompt(d.prompt_kind, given);
    try {
      const auto out = client.complete({d.prompt, lm::SamplingSpec::greedy(options.rollout_tokens), 0, 1});
      d.continuation = out.at(0).text;
      d.matched = match_last_name(d.continuation, surname);
    } catch (const TransportError& e) {
      d.ok = false;
      d.error = e.what();
    } catch (const ProtocolError& e) {
      d.ok = false;
      d.error = e.what();
    }
    details[i] = std::move(d);
  });

  auto result = aggregate_grounding(client.model_id(), entity_set, prompt_kinds, std::move(details));
  for (const auto& name : result.excluded_entities) {
    log_warning("grounding: every request failed for '" + name + "'; excluded from totals");
  }
  return result;
}

std::vector<NextWordRow> next_word_table(lm::LmClient& client, const std::vector<NameRecord>& records,
                                         const std::vector<PromptKind>& prompt_kinds, const NextWordOptions& options) {
  for (const auto& r : records) {
    if (!r.media_last_name) throw ValidationError("next-word table needs a media surname for '" + r.given_name + "'");
  }
  const std::size_t per = prompt_kinds.size();
  std::vector<NextWordRow> rows(records.size() * per);
  parallel_for(rows.size(), options.workers, [&](std::size_t i) {
    const auto& rec = records[i / per];
    NextWordRow row;
    row.given_name = rec.given_name;
    row.prompt_kind = prompt_kinds[i % per];
    row.surname = *rec.media_last_name;
    const std::string prompt = expand_prompt(row.prompt_kind, rec.given_name);
    const auto dist = client.next_token_distribution(prompt, options.top_n);
    if (dist.empty()) throw ProtocolError("empty next-token distribution for '" + prompt + "'");
    row.top_token = dist.front().first;
    row.raw_probability = 100.0 * dist.front().second;
    row.is_surname_match = iequals(trim(row.top_token), row.surname);
    for (const auto& [token, p] : dist) {
      if (iequals(trim(token), row.surname)) row.aggregated_probability += 100.0 * p;
    }
    if (row.top_token.size() == 1 && is_ascii_letter(row.top_token[0]) && options.rollout_tokens > 0) {
      const auto out =
          client.complete({prompt, lm::SamplingSpec::greedy(1 + options.rollout_tokens), 0, 1}).at(0);
      if (!out.tokens.empty() && trim(out.tokens[0].token) == row.top_token) {
        for (std::size_t t = 1; t < out.tokens.size(); ++t) row.disambiguation_rollout += out.tokens[t].token;
      } else {
        const std::string extended = prompt + " " + row.top_token;
        row.disambiguation_rollout =
            client.complete({extended, lm::SamplingSpec::greedy(options.rollout_tokens), 0, 1}).at(0).text;
      }
    }
    rows[i] = std::move(row);
  });
  return rows;
}

nlohmann::json to_json(const GroundingDetail& d) {
  nlohmann::json j{{"given_name", d.given_name},
                   {"surname", d.surname},
                   {"prompt_kind", to_string(d.prompt_kind)},
                   {"prompt", d.prompt},
                   {"continuation", d.continuation},
                   {"matched", d.matched},
                   {"ok", d.ok}};
  if (!d.ok) j["error"] = d.error;
  return j;
}

GroundingDetail grounding_detail_from_json(const nlohmann::json& j) {
  try {
    GroundingDetail d;
    d.given_name = j.at("given_name").get<std::string>();
    d.surname = j.at("surname").get<std::string>();
    d.prompt_kind = parse_prompt_kind(j.at("prompt_kind").get<std::string>());
    d.prompt = j.at("prompt").get<std::string>();
    d.continuation = j.at("continuation").get<std::string>();
    d.matched = j.at("matched").get<bool>();
    d.ok = j.at("ok").get<bool>();
    d.error = j.value("error", "");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed grounding detail row: ") + e.what());
  }
}

nlohmann::json to_json(const NextWordRow& r) {
  return {{"given_name", r.given_name},
          {"prompt_kind", to_string(r.prompt_kind)},
          {"surname", r.surname},
          {"top_token", r.top_token},
          {"raw_probability", r.raw_probability},
          {"aggregated_probability", r.aggregated_probability},
          {"is_surname_match", r.is_surname_match},
          {"disambiguation_rollout", r.disambiguation_rollout}};
}

NextWordRow next_word_row_from_json(const nlohmann::json& j) {
  try {
    NextWordRow r;
    r.given_name = j.at("given_name").get<std::string>();
    r.prompt_kind = parse_prompt_kind(j.at("prompt_kind").get<std::string>());
    r.surname = j.at("surname").get<std::string>();
    r.top_token = j.at("top_token").get<std::string>();
    r.raw_probability = j.at("raw_probability").get<double>();
    r.aggregated_probability = j.at("aggregated_probability").get<double>();
    r.is_surname_match = j.at("is_surname_match").get<bool>();
    r.disambiguation_rollout = j.at("disambiguation_rollout").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed next-word row: ") + e.what());
  }
}

}  // namespace nameprobe::grounding
