#include "nameprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/wire.hpp"

namespace nameprobe::report {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string fixed(double v, int decimals) {
  // glibc rounds the exact binary value to nearest, ties to even.
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);  // no "-0.0"
  return s;
}

std::string cell_text(const Cell& c, Kind kind) {
  return std::visit(
      [&](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return "";
        } else if constexpr (std::is_same_v<T, std::string>) {
          return v;
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::int64_t>) {
          return std::to_string(v);
        } else {
          if (kind == Kind::percent) return format_percent(v);
          if (kind == Kind::score) return format_score(v);
          if (kind == Kind::integer) return std::to_string(static_cast<std::int64_t>(std::llround(v)));
          return format_score(v);
        }
      },
      c.value);
}

ordered_json cell_json(const Cell& c, Kind kind) {
  return std::visit(
      [&](const auto& v) -> ordered_json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nullptr;
        } else if constexpr (std::is_same_v<T, double>) {
          const auto s = cell_text(c, kind);
          if (s.empty()) return nullptr;
          return std::stod(s);
        } else {
          return v;
        }
      },
      c.value);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::string md_field(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '|') out += "\\|";
    else if (ch == '\n' || ch == '\r') out += ' ';
    else out += ch;
  }
  return out;
}

void check_shape(const Table& t) {
  for (const auto& row : t.rows)
    if (row.size() != t.columns.size())
      throw ValidationError("table " + t.name + ": row has " + std::to_string(row.size()) + " cells for " +
                            std::to_string(t.columns.size()) + " columns");
}

std::string render_csv(const Table& t) {
  std::string out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + csv_field(t.columns[i].name);
  out += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_field(cell_text(row[i], t.columns[i].kind));
    out += '\n';
  }
  return out;
}

std::string render_json(const Table& t) {
  ordered_json j;
  j["title"] = t.title;
  j["columns"] = ordered_json::array();
  for (const auto& c : t.columns) j["columns"].push_back(c.name);
  j["rows"] = ordered_json::array();
  for (const auto& row : t.rows) {
    ordered_json r = ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) r[t.columns[i].name] = cell_json(row[i], t.columns[i].kind);
    j["rows"].push_back(std::move(r));
  }
  j["notes"] = t.notes;
  return j.dump(2) + "\n";
}

std::string render_markdown(const Table& t) {
  std::string out = "## " + t.title + "\n\n|";
  for (const auto& c : t.columns) out += " " + md_field(c.name) + " |";
  out += "\n|";
  for (const auto& c : t.columns) out += (c.kind == Kind::text ? " --- |" : " ---: |");
  out += '\n';
  for (const auto& row : t.rows) {
    out += '|';
    for (std::size_t i = 0; i < row.size(); ++i) {
      auto s = md_field(cell_text(row[i], t.columns[i].kind));
      if (row[i].bold && !s.empty()) s = "**" + s + "**";
      out += " " + s + " |";
    }
    out += '\n';
  }
  if (!t.notes.empty()) {
    out += '\n';
    for (const auto& n : t.notes) out += n + "\n";
  }
  return out;
}

bool is_media(const NameBank& bank, const std::string& name) {
  const auto* r = bank.find(name);
  return r && r->is_media_name();
}

std::string gender_of(const NameBank& bank, const std::string& name) {
  const auto* r = bank.find(name);
  return r ? std::string(to_string(r->gender)) : std::string();
}

std::int64_t i64(std::uint64_t v) { return static_cast<std::int64_t>(v); }

json rate_json(const swap::Rate& r) { return {{"hits", r.hits}, {"total", r.total}, {"pct", r.pct()}}; }

json accuracy_json(const swap::SlotAccuracy& a) { return {{"correct", a.correct}, {"valid", a.valid}, {"pct", a.pct()}}; }

std::string json_scalar(const json& j) { return j.dump(); }

void compare(const json& a, const json& b, const std::string& path, std::vector<Discrepancy>& out) {
  if (a.is_number() && b.is_number()) {
    const bool exact = !a.is_number_float() && !b.is_number_float();
    if (exact ? a != b : !(std::fabs(a.get<double>() - b.get<double>()) <= 1e-9))
      out.push_back({path, json_scalar(a), json_scalar(b)});
    return;
  }
  if (a.type() != b.type()) {
    out.push_back({path, json_scalar(a), json_scalar(b)});
    return;
  }
  if (a.is_object()) {
    for (const auto& [k, v] : a.items()) {
      const auto p = path + "/" + k;
      if (!b.contains(k)) out.push_back({p, json_scalar(v), "<missing>"});
      else compare(v, b.at(k), p, out);
    }
    for (const auto& [k, v] : b.items())
      if (!a.contains(k)) out.push_back({path + "/" + k, "<missing>", json_scalar(v)});
    return;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) {
      out.push_back({path, std::to_string(a.size()) + " entries", std::to_string(b.size()) + " entries"});
      return;
    }
    for (std::size_t i = 0; i < a.size(); ++i) compare(a[i], b[i], path + "/" + std::to_string(i), out);
    return;
  }
  if (a != b) out.push_back({path, json_scalar(a), json_scalar(b)});
}

}  // namespace

std::string_view extension(Format f) {
  switch (f) {
    case Format::csv: return "csv";
    case Format::json: return "json";
    case Format::markdown: return "md";
  }
  return "";
}

std::string format_percent(double v) { return fixed(v, 1); }
std::string format_score(double v) { return fixed(v, 3); }

std::string render(const Table& table, Format format) {
  check_shape(table);
  switch (format) {
    case Format::csv: return render_csv(table);
    case Format::json: return render_json(table);
    case Format::markdown: return render_markdown(table);
  }
  return {};
}

Table grounding_table(const std::vector<grounding::GroundingResult>& results) {
  std::vector<grounding::PromptKind> kinds(grounding::kAllPromptKinds.begin(), grounding::kAllPromptKinds.end());
  if (!results.empty()) kinds = results.front().prompt_kinds;
  Table t{"grounding", "Continuations naming the associated entity (%)", {}, {}, {}};
  t.columns = {{"model", Kind::text}, {"entity_set", Kind::text}, {"entities", Kind::integer}};
  for (auto k : kinds) t.columns.push_back({std::string(to_string(k)), Kind::percent});
  t.columns.push_back({"Avg", Kind::percent});
  for (const auto& r : results) {
    if (r.prompt_kinds != kinds) throw ValidationError("grounding results disagree on prompt kinds");
    std::vector<Cell> row{Cell::text(r.model_id), Cell::text(std::string(to_string(r.entity_set))),
                          Cell::integer(static_cast<std::int64_t>(r.entity_count - r.excluded_entities.size()))};
    for (const auto& c : r.cells) row.push_back(Cell::number(c.percentage()));
    row.push_back(Cell::number(r.average()));
    t.rows.push_back(std::move(row));
    if (!r.excluded_entities.empty()) {
      std::string note = r.model_id + "/" + std::string(to_string(r.entity_set)) + ": excluded after failed requests:";
      for (const auto& e : r.excluded_entities) note += " " + e;
      t.notes.push_back(note);
    }
  }
  return t;
}

Table grounding_cells_table(const std::vector<grounding::GroundingResult>& results) {
  Table t{"grounding_cells", "Grounding counts per prompt", {}, {}, {}};
  t.columns = {{"model", Kind::text},     {"entity_set", Kind::text}, {"prompt", Kind::text},
               {"matched", Kind::integer}, {"total", Kind::integer},   {"pct", Kind::percent}};
  for (const auto& r : results)
    for (const auto& c : r.cells)
      t.rows.push_back({Cell::text(c.model_id), Cell::text(std::string(to_string(c.entity_set))),
                        Cell::text(std::string(to_string(c.prompt_kind))), Cell::integer(i64(c.matched)),
                        Cell::integer(i64(c.total)), Cell::number(c.percentage())});
  return t;
}

Table next_word_report(const std::string& model_id, const std::vector<grounding::NextWordRow>& rows) {
  Table t{"next_word", "Most likely next word after the given name (" + model_id + ")", {}, {}, {}};
  t.columns = {{"given_name", Kind::text},    {"prompt", Kind::text},      {"surname", Kind::text},
               {"next_word", Kind::text},     {"rollout", Kind::text},     {"probability", Kind::percent},
               {"raw_probability", Kind::percent}, {"surname_match", Kind::boolean}};
  for (const auto& r : rows)
    t.rows.push_back({Cell::text(r.given_name, true), Cell::text(std::string(to_string(r.prompt_kind))),
                      Cell::text(r.surname), Cell::text(r.top_token, r.is_surname_match),
                      Cell::text(r.disambiguation_rollout), Cell::number(r.top_probability()),
                      Cell::number(r.raw_probability), Cell::flag(r.is_surname_match)});
  return t;
}

Table recovery_table(const recovery::RecoveryResult& result, const NameBank& bank) {
  Table t{"recovery", "Name recovery from scrubbed endings, mean pairwise macro-F1", {}, {}, {}};
  t.columns = {{"rank", Kind::integer}, {"given_name", Kind::text}, {"gender", Kind::text},
               {"mean_f1", Kind::score}, {"pairs", Kind::integer}};
  std::int64_t rank = 0;
  for (const auto& s : result.scores)
    t.rows.push_back({Cell::integer(++rank), Cell::text(s.given_name, is_media(bank, s.given_name)),
                      Cell::text(gender_of(bank, s.given_name)), Cell::number(s.mean_pairwise_f1),
                      Cell::integer(static_cast<std::int64_t>(s.n_pairs))});
  t.notes.push_back("Model: " + result.model_id + ", sampling: " + result.sampling.label());
  t.notes.push_back("Population: " + format_score(result.population_mean) + " ± " +
                    format_score(result.population_std) + " over " + std::to_string(result.scores.size()) + " names");
  return t;
}

Table recovery_pairs_table(const recovery::RecoveryResult& result) {
  Table t{"recovery_pairs", "Pairwise cross-validated macro-F1", {}, {}, {}};
  t.columns = {{"name_a", Kind::text}, {"name_b", Kind::text}, {"f1", Kind::score}};
  for (const auto& p : result.pairs) t.rows.push_back({Cell::text(p.a), Cell::text(p.b), Cell::number(p.f1)});
  return t;
}

Table sentiment_table(const sentiment::SentimentResult& result, const NameBank& bank) {
  Table t{"sentiment", "Average negative sentiment of endings", {}, {}, {}};
  t.columns = {{"rank", Kind::integer},         {"given_name", Kind::text}, {"gender", Kind::text},
               {"avg_negative", Kind::score},   {"endings", Kind::integer}, {"skipped", Kind::integer}};
  std::int64_t rank = 0;
  for (const auto& n : result.ranking)
    t.rows.push_back({Cell::integer(++rank), Cell::text(n.given_name, is_media(bank, n.given_name)),
                      Cell::text(gender_of(bank, n.given_name)), Cell::number(n.avg_negative),
                      Cell::integer(static_cast<std::int64_t>(n.n_endings)),
                      Cell::integer(static_cast<std::int64_t>(n.n_skipped))});
  t.notes.push_back("Model: " + result.model_id + ", scorer: " + result.provider_id);
  t.notes.push_back("Population: " + format_score(result.population_mean) + " ± " +
                    format_score(result.population_std) + " over " + std::to_string(result.ranking.size()) + " names");
  t.notes.push_back("Spread within the ten most negative: " + format_score(result.spread_most_negative) +
                    ", within the ten least negative: " + format_score(result.spread_most_positive));
  if (!result.unscored.empty()) {
    std::string note = "Unscored:";
    for (const auto& n : result.unscored) note += " " + n;
    t.notes.push_back(note);
  }
  return t;
}

Table flip_names_table(const swap::FlipReport& report, const NameBank& bank) {
  Table t{"flip_names", "Flip rate by name (" + report.model_id + ")", {}, {}, {}};
  t.columns = {{"rank", Kind::integer},        {"given_name", Kind::text},  {"gender", Kind::text},
               {"flip_pct", Kind::percent},    {"flips", Kind::integer},    {"pairs", Kind::integer},
               {"acc_as_name1", Kind::percent}, {"acc_as_name2", Kind::percent}};
  std::vector<std::pair<std::string, swap::Rate>> names(report.per_name.begin(), report.per_name.end());
  std::stable_sort(names.begin(), names.end(), [](const auto& x, const auto& y) {
    if (x.second.pct() != y.second.pct()) return x.second.pct() > y.second.pct();
    return x.first < y.first;
  });
  auto accuracy = [&](const std::string& name, swap::Slot slot) -> Cell {
    const auto it = report.per_slot_accuracy.find({name, slot});
    if (it == report.per_slot_accuracy.end() || it->second.valid == 0) return Cell::empty();
    return Cell::number(it->second.pct());
  };
  std::int64_t rank = 0;
  for (const auto& [name, rate] : names)
    t.rows.push_back({Cell::integer(++rank), Cell::text(name, is_media(bank, name)), Cell::text(gender_of(bank, name)),
                      Cell::number(rate.pct()), Cell::integer(i64(rate.hits)), Cell::integer(i64(rate.total)),
                      accuracy(name, swap::Slot::name1), accuracy(name, swap::Slot::name2)});
  return t;
}

Table flips_table(const swap::FlipReport& report) {
  Table t{"flips", "Answer flips under name swaps", {}, {}, {}};
  t.columns = {{"model", Kind::text},         {"task", Kind::text},        {"probe_accuracy", Kind::percent},
               {"flips", Kind::percent},       {"top5_flips", Kind::percent}, {"flipped_pairs", Kind::integer},
               {"scored_pairs", Kind::integer}, {"invalid_pct", Kind::percent}, {"unscored_pairs", Kind::integer}};
  std::string task;
  if (report.task_metadata && report.task_metadata->is_object())
    for (const char* key : {"task", "dataset"})
      if (report.task_metadata->contains(key) && report.task_metadata->at(key).is_string()) {
        task = report.task_metadata->at(key).get<std::string>();
        break;
      }
  t.rows.push_back({Cell::text(report.model_id), Cell::text(task), Cell::number(report.probe_accuracy.pct()),
                    Cell::number(report.overall.pct()), Cell::number(report.top5_flip_pct),
                    Cell::integer(i64(report.overall.hits)), Cell::integer(i64(report.overall.total)),
                    Cell::number(report.invalid.pct()), Cell::integer(i64(report.unscored))});
  const auto top = swap::top_templates(report.per_template);
  if (!top.empty()) {
    std::string note = "Top templates:";
    for (const auto& id : top) note += " " + id;
    t.notes.push_back(note);
  }
  return t;
}

Table flip_templates_table(const swap::FlipReport& report) {
  Table t{"flip_templates", "Flip rate by template (" + report.model_id + ")", {}, {}, {}};
  t.columns = {{"template", Kind::text}, {"flip_pct", Kind::percent}, {"flips", Kind::integer}, {"pairs", Kind::integer}};
  for (const auto& [id, rate] : report.per_template)
    t.rows.push_back({Cell::text(id), Cell::number(rate.pct()), Cell::integer(i64(rate.hits)),
                      Cell::integer(i64(rate.total))});
  return t;
}

json aggregate_json(const grounding::GroundingResult& r) {
  json j{{"probe", "grounding"},
         {"model", r.model_id},
         {"entity_set", to_string(r.entity_set)},
         {"entity_count", r.entity_count},
         {"excluded", r.excluded_entities},
         {"average", r.average()}};
  j["prompt_kinds"] = json::array();
  for (auto k : r.prompt_kinds) j["prompt_kinds"].push_back(to_string(k));
  j["cells"] = json::array();
  for (const auto& c : r.cells)
    j["cells"].push_back({{"prompt", to_string(c.prompt_kind)}, {"matched", c.matched}, {"total", c.total},
                          {"pct", c.percentage()}});
  return j;
}

json aggregate_json(const std::vector<grounding::NextWordRow>& rows) {
  json j{{"probe", "next_word"}, {"rows", json::array()}};
  for (const auto& r : rows) {
    auto row = grounding::to_json(r);
    row["probability"] = r.top_probability();
    j["rows"].push_back(std::move(row));
  }
  return j;
}

json aggregate_json(const recovery::RecoveryResult& r) {
  json j{{"probe", "recovery"},
         {"model", r.model_id},
         {"sampling", wire::sampling_to_json(r.sampling)},
         {"population_mean", r.population_mean},
         {"population_std", r.population_std},
         {"pairs", r.pairs.size()},
         {"scores", json::array()}};
  for (const auto& s : r.scores)
    j["scores"].push_back({{"name", s.given_name}, {"mean_f1", s.mean_pairwise_f1}, {"pairs", s.n_pairs}});
  return j;
}

json aggregate_json(const sentiment::SentimentResult& r) {
  json j{{"probe", "sentiment"},
         {"provider", r.provider_id},
         {"model", r.model_id},
         {"population_mean", r.population_mean},
         {"population_std", r.population_std},
         {"spread_most_negative", r.spread_most_negative},
         {"spread_most_positive", r.spread_most_positive},
         {"unscored", r.unscored},
         {"ranking", json::array()}};
  for (const auto& n : r.ranking)
    j["ranking"].push_back({{"name", n.given_name},
                            {"avg_negative", n.avg_negative},
                            {"endings", n.n_endings},
                            {"skipped", n.n_skipped}});
  return j;
}

json aggregate_json(const swap::FlipReport& r) {
  json j{{"probe", "swap"},
         {"model", r.model_id},
         {"overall", rate_json(r.overall)},
         {"top5_flip_pct", r.top5_flip_pct},
         {"probe_accuracy", accuracy_json(r.probe_accuracy)},
         {"invalid", rate_json(r.invalid)},
         {"unscored", r.unscored},
         {"task_metadata", r.task_metadata ? *r.task_metadata : json(nullptr)}};
  j["per_template"] = json::object();
  for (const auto& [id, rate] : r.per_template) j["per_template"][id] = rate_json(rate);
  j["per_name"] = json::object();
  for (const auto& [name, rate] : r.per_name) j["per_name"][name] = rate_json(rate);
  j["per_slot_accuracy"] = json::array();
  for (const auto& [key, acc] : r.per_slot_accuracy) {
    auto a = accuracy_json(acc);
    a["name"] = key.first;
    a["slot"] = to_string(key.second);
    j["per_slot_accuracy"].push_back(std::move(a));
  }
  return j;
}

std::vector<Discrepancy> verify_consistency(const json& persisted, const json& recomputed) {
  std::vector<Discrepancy> out;
  compare(persisted, recomputed, "", out);
  return out;
}

std::string to_jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

std::vector<json> parse_jsonl(std::string_view text) {
  std::vector<json> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), line_no);
    }
  }
  return rows;
}

std::string run_id_for(const json& canonical_config) { return sha256_hex(canonical_config.dump()); }

json to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},
          {"config", m.config},
          {"probes", m.probes},
          {"namebank_checksum", m.namebank_checksum},
          {"provider_ids", m.provider_ids},
          {"started_at", m.started_at},
          {"finished_at", m.finished_at},
          {"status", m.status}};
}

RunManifest manifest_from_json(const json& j) {
  try {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config = j.at("config");
    m.probes = j.at("probes").get<std::vector<std::string>>();
    m.namebank_checksum = j.at("namebank_checksum").get<std::string>();
    m.provider_ids = j.at("provider_ids").get<std::vector<std::string>>();
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.status = j.value("status", "");
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed manifest: ") + e.what());
  }
}

void write_table(const std::filesystem::path& run_dir, const Table& table) {
  for (auto f : {Format::csv, Format::json, Format::markdown})
    write_file_atomic(run_dir / "tables" / (table.name + "." + std::string(extension(f))), render(table, f));
}

}  // namespace nameprobe::report
