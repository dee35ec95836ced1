#include "nameprobe/app.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <initializer_list>

#include "nameprobe/demo_mock.hpp"
#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/logging.hpp"
#include "nameprobe/recovery.hpp"
#include "nameprobe/report.hpp"
#include "nameprobe/wire.hpp"

namespace nameprobe::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- config parsing -------------------------------------------------------

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
      throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
T get_or(const json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

fs::path path_or(const json& obj, const char* key, const std::string& where, const fs::path& base) {
  const auto s = get_or<std::string>(obj, key, where, "");
  if (s.empty()) return {};
  const fs::path p(s);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

std::uint32_t positive_u32(const json& obj, const char* key, const std::string& where, std::uint32_t fallback) {
  const auto v = get_or<std::int64_t>(obj, key, where, fallback);
  if (v < 1 || v > UINT32_MAX) throw ConfigError(where + "." + key + ": must be a positive integer");
  return static_cast<std::uint32_t>(v);
}

std::uint64_t seed_of(const json& obj, const char* key, const std::string& where, std::uint64_t fallback) {
  if (obj.contains(key) && !obj.at(key).is_number_unsigned())
    throw ConfigError(where + "." + key + ": must be a non-negative integer");
  return get_or<std::uint64_t>(obj, key, where, fallback);
}

template <typename T, typename Parse>
std::vector<T> enum_list(const json& obj, const char* key, const std::string& where, std::vector<T> fallback,
                         Parse parse) {
  if (!obj.contains(key)) return fallback;
  const auto names = get_or<std::vector<std::string>>(obj, key, where, {});
  if (names.empty()) throw ConfigError(where + "." + key + ": must not be empty");
  std::vector<T> out;
  for (const auto& n : names) {
    try {
      out.push_back(parse(n));
    } catch (const Error& e) {
      throw ConfigError(where + "." + key + ": " + e.what());
    }
  }
  return out;
}

lm::HttpEndpoint parse_model(const json& j) {
  check_keys(j, "model", {"base_url", "model_id", "timeout_ms", "auth_env"});
  lm::HttpEndpoint e;
  e.base_url = get_or<std::string>(j, "base_url", "model", "");
  e.model_id = get_or<std::string>(j, "model_id", "model", "");
  e.timeout_ms = static_cast<int>(positive_u32(j, "timeout_ms", "model", 60000));
  e.auth_env = get_or<std::string>(j, "auth_env", "model", e.auth_env);
  return e;
}

swap::HttpQaEndpoint parse_qa(const json& j) {
  check_keys(j, "swap.qa", {"base_url", "model_id", "timeout_ms", "auth_env"});
  swap::HttpQaEndpoint e;
  e.base_url = get_or<std::string>(j, "base_url", "swap.qa", "");
  e.model_id = get_or<std::string>(j, "model_id", "swap.qa", "");
  e.timeout_ms = static_cast<int>(positive_u32(j, "timeout_ms", "swap.qa", 30000));
  e.auth_env = get_or<std::string>(j, "auth_env", "swap.qa", e.auth_env);
  return e;
}

// ---- run helpers ----------------------------------------------------------

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> resolved_corpus_names(const AuditConfig& c, const NameBank& bank) {
  if (!c.corpora.names.empty()) return c.corpora.names;
  std::vector<std::string> out;
  for (const auto& r : filter_bank(bank, ProbeFlag::recovery_sentiment)) out.push_back(r.given_name);
  return out;
}

std::vector<std::string> resolved_next_word_names(const AuditConfig& c, const NameBank& bank) {
  if (!c.grounding.next_word_names.empty()) return c.grounding.next_word_names;
  std::vector<std::string> out;
  for (const auto& r : bank.records())
    if (r.media_frequency && r.media_last_name) out.push_back(r.given_name);
  return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string sentiment_provider_id(const AuditConfig& c, bool mock) {
  if (c.sentiment.kind == "lexicon") return sentiment::load_lexicon(c.sentiment.lexicon_dir)->provider_id();
  if (mock) return demo::demo_sentiment()->provider_id();
  return sentiment::HttpSentimentProvider(c.sentiment.http).provider_id();
}

std::shared_ptr<sentiment::SentimentProvider> make_sentiment(const AuditConfig& c, bool mock) {
  if (c.sentiment.kind == "lexicon") return std::shared_ptr<sentiment::SentimentProvider>(sentiment::load_lexicon(c.sentiment.lexicon_dir));
  if (mock) return demo::demo_sentiment();
  return std::make_shared<sentiment::HttpSentimentProvider>(c.sentiment.http);
}

std::string model_id_of(const AuditConfig& c, bool mock) { return mock ? "demo-mock" : c.model->model_id; }
std::string qa_id_of(const AuditConfig& c, bool mock) { return mock ? "demo-qa" : c.swap.qa->model_id; }

json prompt_list(const std::vector<grounding::PromptKind>& kinds) {
  json a = json::array();
  for (auto k : kinds) a.push_back(to_string(k));
  return a;
}

std::vector<grounding::PromptKind> prompt_kinds_from(const json& a) {
  std::vector<grounding::PromptKind> out;
  for (const auto& s : a) out.push_back(grounding::parse_prompt_kind(s.get<std::string>()));
  return out;
}

std::vector<json> read_details(const fs::path& run_dir, const std::string& stem) {
  const auto path = run_dir / "details" / (stem + ".jsonl");
  if (!fs::exists(path)) throw Error("missing detail rows " + path.string());
  return report::parse_jsonl(read_file(path));
}

void write_details(const fs::path& run_dir, const std::string& stem, const std::vector<json>& rows) {
  write_file_atomic(run_dir / "details" / (stem + ".jsonl"), report::to_jsonl(rows));
}

template <typename T>
std::vector<json> rows_of(const std::vector<T>& items) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const auto& i : items) rows.push_back(to_json(i));
  return rows;
}

struct Recomputed {
  std::vector<std::pair<std::string, json>> aggregates;  // stem -> aggregate
  std::vector<report::Table> tables;
};

// Rebuilds a probe's aggregates and tables from its persisted details and
// the canonical config. Shared by run (before tables are written) and verify.
Recomputed recompute(const std::string& probe, const json& canon, const fs::path& run_dir, const NameBank& bank) {
  Recomputed out;
  const auto model_id = canon.at("model").at("model_id").get<std::string>();
  if (probe == "grounding") {
    const auto& g = canon.at("grounding");
    const auto kinds = prompt_kinds_from(g.at("prompts"));
    std::vector<grounding::GroundingResult> results;
    for (const auto& s : g.at("entity_sets")) {
      const auto set = grounding::parse_entity_set(s.get<std::string>());
      const auto stem = "grounding-" + std::string(to_string(set));
      std::vector<grounding::GroundingDetail> details;
      for (const auto& row : read_details(run_dir, stem)) details.push_back(grounding::grounding_detail_from_json(row));
      results.push_back(grounding::aggregate_grounding(model_id, set, kinds, std::move(details)));
      out.aggregates.emplace_back(stem, report::aggregate_json(results.back()));
    }
    out.tables.push_back(report::grounding_table(results));
    out.tables.push_back(report::grounding_cells_table(results));
    if (g.at("next_word").at("enabled").get<bool>()) {
      std::vector<grounding::NextWordRow> rows;
      for (const auto& row : read_details(run_dir, "next_word")) rows.push_back(grounding::next_word_row_from_json(row));
      out.aggregates.emplace_back("next_word", report::aggregate_json(rows));
      out.tables.push_back(report::next_word_report(model_id, rows));
    }
  } else if (probe == "recovery") {
    std::vector<recovery::PairScore> pairs;
    for (const auto& row : read_details(run_dir, "recovery_pairs")) pairs.push_back(recovery::pair_score_from_json(row));
    const auto sampling = wire::sampling_from_json(canon.at("corpora").at("sampling"));
    const auto r = recovery::aggregate_recovery(model_id, sampling, std::move(pairs));
    out.aggregates.emplace_back("recovery", report::aggregate_json(r));
    out.tables.push_back(report::recovery_table(r, bank));
    out.tables.push_back(report::recovery_pairs_table(r));
  } else if (probe == "sentiment") {
    std::vector<sentiment::EndingSentiment> details;
    for (const auto& row : read_details(run_dir, "sentiment")) details.push_back(sentiment::ending_sentiment_from_json(row));
    const auto r = sentiment::aggregate_sentiment(canon.at("sentiment").at("provider_id").get<std::string>(), model_id,
                                                  std::move(details));
    out.aggregates.emplace_back("sentiment", report::aggregate_json(r));
    out.tables.push_back(report::sentiment_table(r, bank));
  } else if (probe == "swap") {
    std::vector<swap::PairOutcome> details;
    for (const auto& row : read_details(run_dir, "swap")) details.push_back(swap::pair_outcome_from_json(row));
    auto r = swap::aggregate_flips(canon.at("swap").at("qa_model").get<std::string>(), std::move(details));
    const auto meta_path = run_dir / "details" / "swap_task.json";
    if (fs::exists(meta_path)) {
      const auto meta = json::parse(read_file(meta_path));
      if (!meta.is_null()) r.task_metadata = meta;
    }
    out.aggregates.emplace_back("swap", report::aggregate_json(r));
    out.tables.push_back(report::flip_names_table(r, bank));
    out.tables.push_back(report::flips_table(r));
    out.tables.push_back(report::flip_templates_table(r));
  } else {
    throw Error("unknown probe '" + probe + "'");
  }
  return out;
}

std::string describe(const std::vector<report::Discrepancy>& diffs, const std::string& stem) {
  std::string s;
  for (std::size_t i = 0; i < diffs.size() && i < 5; ++i)
    s += "\n  " + stem + diffs[i].path + ": expected " + diffs[i].expected + ", found " + diffs[i].actual;
  if (diffs.size() > 5) s += "\n  ... " + std::to_string(diffs.size() - 5) + " more";
  return s;
}

// Recomputes from the details just written, checks them against the
// in-memory aggregates and only then writes aggregates and tables.
void finalize_probe(const std::string& probe, const json& canon, const fs::path& run_dir, const NameBank& bank,
                    const std::vector<std::pair<std::string, json>>& in_memory) {
  const auto re = recompute(probe, canon, run_dir, bank);
  if (re.aggregates.size() != in_memory.size()) throw Error(probe + ": aggregate count mismatch after recomputation");
  for (std::size_t i = 0; i < in_memory.size(); ++i) {
    const auto diffs = report::verify_consistency(in_memory[i].second, re.aggregates[i].second);
    if (!diffs.empty()) throw Error(probe + ": aggregates disagree with detail rows" + describe(diffs, in_memory[i].first));
  }
  for (const auto& [stem, agg] : re.aggregates)
    write_file_atomic(run_dir / "aggregates" / (stem + ".json"), agg.dump(2) + "\n");
  for (const auto& t : re.tables) report::write_table(run_dir, t);
}

}  // namespace

AuditConfig parse_config(const json& j, const fs::path& base) {
  check_keys(j, "config", {"namebank", "output_dir", "cache_dir", "parallelism", "model", "probes", "grounding",
                           "corpora", "recovery", "sentiment", "swap"});
  AuditConfig c;
  c.namebank = path_or(j, "namebank", "config", base);
  if (c.namebank.empty()) throw ConfigError("config.namebank is required");
  c.output_dir = path_or(j, "output_dir", "config", base);
  if (c.output_dir.empty()) c.output_dir = base / "runs";
  c.cache_dir = path_or(j, "cache_dir", "config", base);
  if (c.cache_dir.empty()) c.cache_dir = base / "cache";
  c.parallelism = positive_u32(j, "parallelism", "config", 4);
  if (j.contains("model")) c.model = parse_model(j.at("model"));
  if (j.contains("probes")) {
    c.probes = get_or<std::vector<std::string>>(j, "probes", "config", {});
    for (const auto& p : c.probes)
      if (std::find(std::begin(kProbeNames), std::end(kProbeNames), p) == std::end(kProbeNames))
        throw ConfigError("config.probes: unknown probe '" + p + "'");
  }

  if (j.contains("grounding")) {
    const auto& g = j.at("grounding");
    check_keys(g, "grounding", {"entity_sets", "prompts", "rollout_tokens", "next_word"});
    c.grounding.entity_sets = enum_list(g, "entity_sets", "grounding", c.grounding.entity_sets, grounding::parse_entity_set);
    c.grounding.prompts = enum_list(g, "prompts", "grounding", c.grounding.prompts, grounding::parse_prompt_kind);
    c.grounding.rollout_tokens = positive_u32(g, "rollout_tokens", "grounding", 5);
    if (g.contains("next_word")) {
      const auto& n = g.at("next_word");
      check_keys(n, "grounding.next_word", {"enabled", "names", "prompts", "top_n"});
      c.grounding.next_word = get_or<bool>(n, "enabled", "grounding.next_word", true);
      c.grounding.next_word_names = get_or<std::vector<std::string>>(n, "names", "grounding.next_word", {});
      c.grounding.next_word_prompts =
          enum_list(n, "prompts", "grounding.next_word", c.grounding.next_word_prompts, grounding::parse_prompt_kind);
      c.grounding.top_n = positive_u32(n, "top_n", "grounding.next_word", 20);
      if (c.grounding.top_n > lm::kMaxLogprobTopN) throw ConfigError("grounding.next_word.top_n: at most 100");
    }
  }

  if (j.contains("corpora")) {
    const auto& k = j.at("corpora");
    check_keys(k, "corpora", {"sampling", "endings", "names"});
    if (k.contains("sampling")) {
      try {
        c.corpora.sampling = wire::sampling_from_json(k.at("sampling"));
      } catch (const ValidationError& e) {
        throw ConfigError(std::string("corpora.sampling: ") + e.what());
      }
    }
    c.corpora.endings = positive_u32(k, "endings", "corpora", 50);
    c.corpora.names = get_or<std::vector<std::string>>(k, "names", "corpora", {});
  }

  if (j.contains("recovery")) {
    const auto& r = j.at("recovery");
    check_keys(r, "recovery", {"cv", "svm", "scrub_surnames"});
    if (r.contains("cv")) {
      const auto& cv = r.at("cv");
      check_keys(cv, "recovery.cv", {"folds", "seed", "stratified"});
      c.recovery.plan.folds = positive_u32(cv, "folds", "recovery.cv", 5);
      c.recovery.plan.seed = seed_of(cv, "seed", "recovery.cv", 1);
      c.recovery.plan.stratified = get_or<bool>(cv, "stratified", "recovery.cv", true);
      if (c.recovery.plan.folds < 2) throw ConfigError("recovery.cv.folds: at least 2");
    }
    if (r.contains("svm")) {
      const auto& s = r.at("svm");
      check_keys(s, "recovery.svm", {"lambda", "epochs", "seed"});
      c.recovery.svm.lambda = get_or<double>(s, "lambda", "recovery.svm", 1e-4);
      if (!(c.recovery.svm.lambda > 0.0)) throw ConfigError("recovery.svm.lambda: must be > 0");
      c.recovery.svm.epochs = positive_u32(s, "epochs", "recovery.svm", 20);
      c.recovery.svm.seed = seed_of(s, "seed", "recovery.svm", 2);
    }
    c.recovery.scrub_surnames = get_or<bool>(r, "scrub_surnames", "recovery", false);
  }

  if (j.contains("sentiment")) {
    const auto& s = j.at("sentiment");
    check_keys(s, "sentiment", {"provider", "lexicon_dir", "http", "batch_size"});
    c.sentiment.kind = get_or<std::string>(s, "provider", "sentiment", "lexicon");
    if (c.sentiment.kind != "lexicon" && c.sentiment.kind != "http")
      throw ConfigError("sentiment.provider: expected \"lexicon\" or \"http\"");
    c.sentiment.lexicon_dir = path_or(s, "lexicon_dir", "sentiment", base);
    if (s.contains("http")) {
      const auto& h = s.at("http");
      check_keys(h, "sentiment.http", {"base_url", "provider_id", "timeout_ms", "auth_env"});
      c.sentiment.http.base_url = get_or<std::string>(h, "base_url", "sentiment.http", "");
      c.sentiment.http.provider_id = get_or<std::string>(h, "provider_id", "sentiment.http", "");
      c.sentiment.http.timeout_ms = static_cast<int>(positive_u32(h, "timeout_ms", "sentiment.http", 30000));
      c.sentiment.http.auth_env = get_or<std::string>(h, "auth_env", "sentiment.http", c.sentiment.http.auth_env);
    }
    c.sentiment.batch_size = positive_u32(s, "batch_size", "sentiment", 32);
  }

  if (j.contains("swap")) {
    const auto& s = j.at("swap");
    check_keys(s, "swap", {"qa", "templates", "pair_budget", "seed"});
    if (s.contains("qa")) c.swap.qa = parse_qa(s.at("qa"));
    c.swap.templates = path_or(s, "templates", "swap", base);
    c.swap.pair_budget = seed_of(s, "pair_budget", "swap", 0);
    c.swap.seed = seed_of(s, "seed", "swap", 3);
  }
  return c;
}

AuditConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

void validate_config(const AuditConfig& c, const std::vector<std::string>& probes, bool mock) {
  auto need_file = [](const fs::path& p, const std::string& what) {
    if (p.empty()) throw ConfigError(what + " is not configured");
    if (!fs::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
  };
  need_file(c.namebank, "name bank");
  if (probes.empty()) throw ConfigError("no probes selected");
  const bool needs_model = contains(probes, "grounding") || contains(probes, "recovery") || contains(probes, "sentiment");
  if (needs_model && !mock) {
    if (!c.model) throw ConfigError("a model endpoint is required (config.model)");
    if (c.model->base_url.empty() || c.model->model_id.empty())
      throw ConfigError("config.model needs base_url and model_id");
  }
  if (contains(probes, "recovery") || contains(probes, "sentiment")) {
    if (!c.corpora.sampling.is_sampled()) throw ConfigError("corpora.sampling must be nucleus or topk");
    if (contains(probes, "recovery") && c.corpora.endings < c.recovery.plan.folds)
      throw ConfigError("corpora.endings must be at least recovery.cv.folds");
  }
  if (contains(probes, "sentiment")) {
    if (c.sentiment.kind == "lexicon") {
      need_file(c.sentiment.lexicon_dir / "negative.txt", "sentiment lexicon");
      need_file(c.sentiment.lexicon_dir / "positive.txt", "sentiment lexicon");
    } else if (!mock && c.sentiment.http.base_url.empty()) {
      throw ConfigError("sentiment.http.base_url is required for the http provider");
    }
  }
  if (contains(probes, "swap")) {
    if (!mock && (!c.swap.qa || c.swap.qa->base_url.empty() || c.swap.qa->model_id.empty()))
      throw ConfigError("swap is enabled but no QA endpoint is configured (swap.qa)");
    need_file(c.swap.templates, "swap templates");
  }
}

std::vector<std::string> probes_for(const std::string& subcommand, const AuditConfig& config) {
  if (subcommand == "all") return config.probes;
  if (std::find(std::begin(kProbeNames), std::end(kProbeNames), subcommand) == std::end(kProbeNames))
    throw ConfigError("unknown subcommand '" + subcommand + "'");
  return {subcommand};
}

json canonical_config(const AuditConfig& c, const std::vector<std::string>& probes, bool mock) {
  NameBank bank;
  try {
    bank = load_namebank(c.namebank);
  } catch (const Error& e) {
    throw ConfigError(std::string("name bank: ") + e.what());
  }
  json j{{"mock", mock}, {"probes", probes}, {"namebank_sha256", bank.checksum()}};
  json model{{"model_id", model_id_of(c, mock)}};
  if (!mock && c.model) model["base_url"] = c.model->base_url;
  j["model"] = model;

  if (contains(probes, "grounding")) {
    json sets = json::array();
    for (auto s : c.grounding.entity_sets) sets.push_back(to_string(s));
    const auto names = c.grounding.next_word ? resolved_next_word_names(c, bank) : std::vector<std::string>{};
    for (const auto& n : names) {
      const auto* r = bank.find(n);
      if (!r) throw ConfigError("grounding.next_word.names: '" + n + "' is not in the name bank");
      if (!r->media_last_name) throw ConfigError("grounding.next_word.names: '" + n + "' has no media surname");
    }
    j["grounding"] = {{"entity_sets", sets},
                      {"prompts", prompt_list(c.grounding.prompts)},
                      {"rollout_tokens", c.grounding.rollout_tokens},
                      {"next_word",
                       {{"enabled", c.grounding.next_word},
                        {"names", names},
                        {"prompts", prompt_list(c.grounding.next_word_prompts)},
                        {"top_n", c.grounding.top_n}}}};
  }
  if (contains(probes, "recovery") || contains(probes, "sentiment")) {
    const auto names = resolved_corpus_names(c, bank);
    for (const auto& n : names)
      if (!bank.find(n)) throw ConfigError("corpora.names: '" + n + "' is not in the name bank");
    j["corpora"] = {{"sampling", wire::sampling_to_json(c.corpora.sampling)}, {"endings", c.corpora.endings}, {"names", names}};
  }
  if (contains(probes, "recovery")) {
    j["recovery"] = {{"cv", {{"folds", c.recovery.plan.folds}, {"seed", c.recovery.plan.seed}, {"stratified", c.recovery.plan.stratified}}},
                     {"svm", {{"lambda", c.recovery.svm.lambda}, {"epochs", c.recovery.svm.epochs}, {"seed", c.recovery.svm.seed}}},
                     {"scrub_surnames", c.recovery.scrub_surnames}};
  }
  if (contains(probes, "sentiment")) {
    std::string id;
    try {
      id = sentiment_provider_id(c, mock);
    } catch (const Error& e) {
      throw ConfigError(std::string("sentiment provider: ") + e.what());
    }
    j["sentiment"] = {{"provider_id", id}, {"batch_size", c.sentiment.batch_size}};
  }
  if (contains(probes, "swap")) {
    json s{{"qa_model", qa_id_of(c, mock)},
           {"templates_sha256", sha256_hex(read_file(c.swap.templates))},
           {"pair_budget", c.swap.pair_budget},
           {"seed", c.swap.seed}};
    if (!mock) s["qa_base_url"] = c.swap.qa->base_url;
    j["swap"] = s;
  }
  return j;
}

RunResult run(const AuditConfig& c, const std::vector<std::string>& probes, const RunOptions& options) {
  RunResult res;
  json canon;
  NameBank bank;
  swap::TemplateSet templates;
  try {
    validate_config(c, probes, options.mock);
    canon = canonical_config(c, probes, options.mock);
    bank = load_namebank(c.namebank);
    if (contains(probes, "swap")) templates = swap::load_templates(c.swap.templates);
  } catch (const Error& e) {
    log(LogLevel::error, std::string("config error: ") + e.what());
    res.exit_code = kConfigError;
    res.failures.push_back(e.what());
    return res;
  }

  report::RunManifest manifest;
  manifest.run_id = report::run_id_for(canon);
  manifest.config = canon;
  manifest.probes = probes;
  manifest.namebank_checksum = bank.checksum();
  res.run_dir = c.output_dir / manifest.run_id.substr(0, 16);
  const auto manifest_path = res.run_dir / "manifest.json";
  if (!options.force && fs::exists(manifest_path)) {
    try {
      const auto prior = report::manifest_from_json(json::parse(read_file(manifest_path)));
      if (prior.status == "complete" && prior.run_id == manifest.run_id) {
        log_info("run " + res.run_dir.string() + " is already complete");
        return res;
      }
    } catch (const std::exception&) {
      // unreadable manifest: recompute
    }
  }

  // Temp files left behind by an interrupted run.
  if (fs::exists(res.run_dir)) {
    std::vector<fs::path> stale;
    for (const auto& e : fs::recursive_directory_iterator(res.run_dir))
      if (e.is_regular_file() && e.path().filename().string().find(".tmp.") != std::string::npos) stale.push_back(e.path());
    for (const auto& p : stale) fs::remove(p);
  }

  manifest.started_at = utc_now();
  manifest.status = "running";
  manifest.provider_ids.push_back(model_id_of(c, options.mock));
  if (canon.contains("sentiment")) manifest.provider_ids.push_back(canon["sentiment"]["provider_id"]);
  if (canon.contains("swap")) manifest.provider_ids.push_back(canon["swap"]["qa_model"]);
  write_file_atomic(manifest_path, report::to_json(manifest).dump(2) + "\n");
  write_file_atomic(res.run_dir / "namebank.tsv", read_file(c.namebank));
  log_info("run directory " + res.run_dir.string());

  std::shared_ptr<lm::CompletionBackend> backend;
  if (options.mock) backend = demo::demo_model(bank);
  else if (c.model) backend = std::make_shared<lm::HttpCompletionBackend>(*c.model);
  std::optional<lm::LmClient> client;
  if (backend) client.emplace(backend, lm::GenerationCache(c.cache_dir / "completions"), RetryPolicy{}, c.parallelism);

  auto attempt = [&](const std::string& probe, auto&& body) {
    try {
      log_info("probe " + probe + ": start");
      body();
      log_info("probe " + probe + ": done");
    } catch (const std::exception& e) {
      log(LogLevel::error, "probe " + probe + " failed: " + e.what());
      res.failures.push_back(probe + ": " + e.what());
    }
  };

  if (contains(probes, "grounding")) {
    attempt("grounding", [&] {
      std::vector<std::pair<std::string, json>> aggs;
      for (auto set : c.grounding.entity_sets) {
        const auto r = grounding::run_grounding_probe(*client, bank, set, c.grounding.prompts,
                                                      {c.grounding.rollout_tokens, c.parallelism});
        const auto stem = "grounding-" + std::string(to_string(set));
        write_details(res.run_dir, stem, rows_of(r.details));
        aggs.emplace_back(stem, report::aggregate_json(r));
        if (!r.excluded_entities.empty())
          res.failures.push_back("grounding: " + std::to_string(r.excluded_entities.size()) + " " +
                                 std::string(to_string(set)) + " entities excluded after failed requests");
      }
      if (c.grounding.next_word) {
        std::vector<NameRecord> records;
        for (const auto& n : canon["grounding"]["next_word"]["names"]) records.push_back(*bank.find(n.get<std::string>()));
        const auto rows = grounding::next_word_table(*client, records, c.grounding.next_word_prompts,
                                                     {c.grounding.top_n, 4, c.parallelism});
        write_details(res.run_dir, "next_word", rows_of(rows));
        aggs.emplace_back("next_word", report::aggregate_json(rows));
      }
      finalize_probe("grounding", canon, res.run_dir, bank, aggs);
    });
  }

  std::vector<recovery::EndingCorpus> corpora;
  bool corpora_ok = false;
  if (contains(probes, "recovery") || contains(probes, "sentiment")) {
    attempt("corpora", [&] {
      const auto names = canon["corpora"]["names"].get<std::vector<std::string>>();
      corpora = recovery::build_corpora(*client, names, c.corpora.sampling, c.corpora.endings, c.parallelism);
      for (const auto& corpus : corpora) recovery::save_corpus(res.run_dir / "corpora", corpus);
      corpora_ok = true;
    });
  }

  if (contains(probes, "recovery") && corpora_ok) {
    attempt("recovery", [&] {
      recovery::RecoveryOptions opts{c.recovery.plan, c.recovery.svm, c.recovery.scrub_surnames, c.parallelism};
      const auto r = recovery::recovery_scores(corpora, bank, opts);
      write_details(res.run_dir, "recovery_pairs", rows_of(r.pairs));
      finalize_probe("recovery", canon, res.run_dir, bank, {{"recovery", report::aggregate_json(r)}});
    });
  }

  if (contains(probes, "sentiment") && corpora_ok) {
    attempt("sentiment", [&] {
      auto provider = make_sentiment(c, options.mock);
      sentiment::ScoreOptions opts;
      opts.batch_size = c.sentiment.batch_size;
      opts.workers = c.parallelism;
      const auto r = sentiment::rank_names_by_negative(corpora, *provider, opts);
      write_details(res.run_dir, "sentiment", rows_of(r.details));
      finalize_probe("sentiment", canon, res.run_dir, bank, {{"sentiment", report::aggregate_json(r)}});
    });
  }

  if (contains(probes, "swap")) {
    attempt("swap", [&] {
      std::shared_ptr<swap::QaModel> qa = options.mock ? demo::demo_qa(bank, templates.templates)
                                                       : std::make_shared<swap::HttpQaModel>(*c.swap.qa);
      swap::CachedQaModel cached(qa, c.cache_dir / "qa");
      swap::SwapOptions opts;
      opts.pair_budget = c.swap.pair_budget;
      opts.seed = c.swap.seed;
      opts.workers = c.parallelism;
      const auto r = swap::run_swap_probe(cached, templates.templates, bank, opts);
      write_details(res.run_dir, "swap", rows_of(r.details));
      write_file_atomic(res.run_dir / "details" / "swap_task.json",
                        (r.task_metadata ? *r.task_metadata : json(nullptr)).dump() + "\n");
      if (r.unscored > 0) res.failures.push_back("swap: " + std::to_string(r.unscored) + " pairs unscored after retries");
      finalize_probe("swap", canon, res.run_dir, bank, {{"swap", report::aggregate_json(r)}});
    });
  }

  manifest.finished_at = utc_now();
  manifest.status = res.failures.empty() ? "complete" : "failed";
  write_file_atomic(manifest_path, report::to_json(manifest).dump(2) + "\n");
  if (!res.failures.empty()) res.exit_code = kProbeFailure;
  return res;
}

VerifyResult verify_run(const fs::path& run_dir) {
  VerifyResult v;
  auto finding = [&](std::string s) {
    v.ok = false;
    v.findings.push_back(std::move(s));
  };
  report::RunManifest manifest;
  NameBank bank;
  try {
    manifest = report::manifest_from_json(json::parse(read_file(run_dir / "manifest.json")));
    bank = parse_namebank(read_file(run_dir / "namebank.tsv"), (run_dir / "namebank.tsv").string());
  } catch (const std::exception& e) {
    finding(std::string("cannot read run: ") + e.what());
    return v;
  }
  if (report::run_id_for(manifest.config) != manifest.run_id) finding("manifest run_id does not match its config");
  if (bank.checksum() != manifest.namebank_checksum) finding("namebank.tsv checksum differs from the manifest");

  for (const auto& probe : manifest.probes) {
    Recomputed re;
    try {
      re = recompute(probe, manifest.config, run_dir, bank);
    } catch (const std::exception& e) {
      finding(probe + ": " + e.what());
      continue;
    }
    for (const auto& [stem, agg] : re.aggregates) {
      const auto path = run_dir / "aggregates" / (stem + ".json");
      try {
        const auto diffs = report::verify_consistency(json::parse(read_file(path)), agg);
        for (const auto& d : diffs)
          finding(stem + d.path + ": persisted " + d.expected + ", recomputed " + d.actual);
      } catch (const std::exception& e) {
        finding(stem + ": " + e.what());
      }
    }
    for (const auto& t : re.tables) {
      for (auto f : {report::Format::csv, report::Format::json, report::Format::markdown}) {
        const auto path = run_dir / "tables" / (t.name + "." + std::string(report::extension(f)));
        try {
          if (read_file(path) != report::render(t, f)) finding(path.filename().string() + " differs from its recomputation");
        } catch (const std::exception& e) {
          finding(path.filename().string() + ": " + e.what());
        }
      }
    }
  }
  return v;
}

}  // namespace nameprobe::app
