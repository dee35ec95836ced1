#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "nameprobe/grounding.hpp"
#include "nameprobe/namebank.hpp"
#include "nameprobe/recovery.hpp"
#include "nameprobe/sentiment.hpp"
#include "nameprobe/swap.hpp"

namespace nameprobe::report {

enum class Format { csv, json, markdown };
std::string_view extension(Format f);  // "csv", "json", "md"

// Percentages print with 1 decimal, scores with 3.
enum class Kind { text, integer, percent, score, boolean };

struct Column {
  std::string name;
  Kind kind = Kind::text;
};

struct Cell {
  std::variant<std::monostate, std::string, std::int64_t, double, bool> value;
  bool bold = false;  // markdown only

  static Cell empty() { return {}; }
  static Cell text(std::string s, bool bold = false) { return {std::move(s), bold}; }
  static Cell integer(std::int64_t v) { return {v, false}; }
  static Cell number(double v) { return {v, false}; }
  static Cell flag(bool v) { return {v, false}; }
};

struct Table {
  std::string name;   // file stem
  std::string title;  // markdown heading
  std::vector<Column> columns;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> notes;  // markdown and json only
};

std::string format_percent(double v);
std::string format_score(double v);

// Byte-deterministic rendering. CSV: header plus rows, RFC 4180 quoting, LF
// line ends. JSON: {"title","columns","rows":[{...}],"notes"} with numbers
// rounded as in CSV. Markdown: heading, pipe table, notes.
std::string render(const Table& table, Format format);

// Table builders. `bank` drives bolding of media names.
Table grounding_table(const std::vector<grounding::GroundingResult>& results);
Table grounding_cells_table(const std::vector<grounding::GroundingResult>& results);
Table next_word_report(const std::string& model_id, const std::vector<grounding::NextWordRow>& rows);
Table recovery_table(const recovery::RecoveryResult& result, const NameBank& bank);
Table recovery_pairs_table(const recovery::RecoveryResult& result);
Table sentiment_table(const sentiment::SentimentResult& result, const NameBank& bank);
Table flip_names_table(const swap::FlipReport& report, const NameBank& bank);
Table flips_table(const swap::FlipReport& report);
Table flip_templates_table(const swap::FlipReport& report);

// Full-precision aggregates persisted next to the tables and recomputed by
// verification.
nlohmann::json aggregate_json(const grounding::GroundingResult& r);
nlohmann::json aggregate_json(const std::vector<grounding::NextWordRow>& rows);
nlohmann::json aggregate_json(const recovery::RecoveryResult& r);
nlohmann::json aggregate_json(const sentiment::SentimentResult& r);
nlohmann::json aggregate_json(const swap::FlipReport& r);

struct Discrepancy {
  std::string path;  // JSON pointer into the aggregate
  std::string expected;
  std::string actual;
};

// Compares a persisted aggregate with one recomputed from details. Integers,
// strings and booleans must match exactly; other numbers within 1e-9.
std::vector<Discrepancy> verify_consistency(const nlohmann::json& persisted, const nlohmann::json& recomputed);

// JSON Lines helpers.
std::string to_jsonl(const std::vector<nlohmann::json>& rows);
std::vector<nlohmann::json> parse_jsonl(std::string_view text);  // ValidationError with line number

struct RunManifest {
  std::string run_id;
  nlohmann::json config;  // canonical configuration the id is derived from
  std::vector<std::string> probes;
  std::string namebank_checksum;
  std::vector<std::string> provider_ids;
  std::string started_at;
  std::string finished_at;
  std::string status;  // "running", "complete", "failed"
};

// sha256 of the canonical config dump (no timestamps).
std::string run_id_for(const nlohmann::json& canonical_config);
nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// <run>/tables/<name>.{csv,json,md}
void write_table(const std::filesystem::path& run_dir, const Table& table);

}  // namespace nameprobe::report
