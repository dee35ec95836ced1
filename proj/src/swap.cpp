#include "nameprobe/swap.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/http_json.hpp"
#include "nameprobe/logging.hpp"
#include "nameprobe/parallel.hpp"
#include "nameprobe/rng.hpp"
#include "nameprobe/text_util.hpp"

namespace nameprobe::swap {

using nlohmann::json;

namespace {

constexpr std::string_view kName1 = "[NAME1]";
constexpr std::string_view kName2 = "[NAME2]";

std::string substitute(std::string_view text, const std::string& slot1, const std::string& slot2) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.substr(i, kName1.size()) == kName1) {
      out += slot1;
      i += kName1.size();
    } else if (text.substr(i, kName2.size()) == kName2) {
      out += slot2;
      i += kName2.size();
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ProtocolError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ProtocolError(std::string("field '") + key + "' has the wrong type");
  }
}

Resolution as_resolution(Slot s) { return s == Slot::name1 ? Resolution::slot1 : Resolution::slot2; }

}  // namespace

std::string_view to_string(Slot s) { return s == Slot::name1 ? "NAME1" : "NAME2"; }

Slot parse_slot(std::string_view s) {
  if (iequals(s, "NAME1")) return Slot::name1;
  if (iequals(s, "NAME2")) return Slot::name2;
  throw ValidationError("unknown answer slot '" + std::string(s) + "'");
}

std::string_view to_string(QaFormat f) { return f == QaFormat::squad_qa ? "squad_qa" : "winogrande_fitb"; }

QaFormat parse_format(std::string_view s) {
  if (s == "squad_qa") return QaFormat::squad_qa;
  if (s == "winogrande_fitb") return QaFormat::winogrande_fitb;
  throw ValidationError("unknown QA format '" + std::string(s) + "'");
}

void SwapTemplate::validate() const {
  if (template_id.empty()) throw ValidationError("swap template without an id");
  if (context.find(kName1) == std::string::npos || context.find(kName2) == std::string::npos) {
    throw ValidationError("template '" + template_id + "' context needs both [NAME1] and [NAME2]");
  }
  if (question.empty()) throw ValidationError("template '" + template_id + "' has an empty question");
}

json to_json(const SwapTemplate& t) {
  return {{"template_id", t.template_id},
          {"context", t.context},
          {"question", t.question},
          {"answer_slot", to_string(t.answer_slot)},
          {"format", to_string(t.format)}};
}

TemplateSet parse_templates(const json& j) {
  if (!j.is_array()) throw ValidationError("template file must hold a JSON list");
  TemplateSet set;
  std::set<std::string> ids;
  for (const auto& e : j) {
    try {
      const auto id = e.at("template_id").get<std::string>();
      if (!ids.insert(id).second) throw ValidationError("duplicate template id '" + id + "'");
      if (e.value("placeholder", false)) {
        set.placeholders.push_back(id);
        continue;
      }
      SwapTemplate t;
      t.template_id = id;
      t.context = e.at("context").get<std::string>();
      t.question = e.at("question").get<std::string>();
      t.answer_slot = parse_slot(e.at("answer_slot").get<std::string>());
      t.format = parse_format(e.value("format", std::string("squad_qa")));
      t.validate();
      set.templates.push_back(std::move(t));
    } catch (const json::exception& ex) {
      throw ValidationError(std::string("malformed swap template: ") + ex.what());
    }
  }
  return set;
}

TemplateSet load_templates(const std::filesystem::path& path) {
  try {
    return parse_templates(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError("template file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

SwapInstance expand_instance(const SwapTemplate& t, const std::string& slot1, const std::string& slot2) {
  SwapInstance s;
  s.template_id = t.template_id;
  s.name_in_slot1 = slot1;
  s.name_in_slot2 = slot2;
  s.context = substitute(t.context, slot1, slot2);
  s.question = substitute(t.question, slot1, slot2);
  s.format = t.format;
  s.gold_name = t.answer_slot == Slot::name1 ? slot1 : slot2;
  return s;
}

std::pair<SwapInstance, SwapInstance> expand_swap(const SwapTemplate& t, const std::string& name_a,
                                                  const std::string& name_b) {
  if (name_a == name_b) throw ValidationError("swap needs two different names");
  return {expand_instance(t, name_a, name_b), expand_instance(t, name_b, name_a)};
}

std::string_view to_string(Resolution r) {
  switch (r) {
    case Resolution::slot1: return "SLOT1";
    case Resolution::slot2: return "SLOT2";
    case Resolution::invalid: return "INVALID";
  }
  return "INVALID";
}

namespace {
Resolution parse_resolution(std::string_view s) {
  if (s == "SLOT1") return Resolution::slot1;
  if (s == "SLOT2") return Resolution::slot2;
  if (s == "INVALID") return Resolution::invalid;
  throw ValidationError("unknown resolution '" + std::string(s) + "'");
}
}  // namespace

Resolution resolve_predicted_slot(std::string_view answer_text, const SwapInstance& instance) {
  const bool one = contains_whole_word_ci(answer_text, instance.name_in_slot1);
  const bool two = contains_whole_word_ci(answer_text, instance.name_in_slot2);
  if (one == two) return Resolution::invalid;
  return one ? Resolution::slot1 : Resolution::slot2;
}

QaRequest QaRequest::from(const SwapInstance& instance) {
  return {instance.context, instance.question, instance.format, {instance.name_in_slot1, instance.name_in_slot2}};
}

json qa_request_to_json(const QaRequest& r) {
  return {{"context", r.context},
          {"question", r.question},
          {"format", to_string(r.format)},
          {"candidates", {r.candidates[0], r.candidates[1]}}};
}

QaRequest qa_request_from_json(const json& j) {
  QaRequest r;
  r.context = field<std::string>(j, "context");
  r.question = field<std::string>(j, "question");
  try {
    r.format = parse_format(field<std::string>(j, "format"));
  } catch (const ValidationError& e) {
    throw ProtocolError(e.what());
  }
  const auto c = field<std::vector<std::string>>(j, "candidates");
  if (c.size() != 2) throw ProtocolError("QA request needs exactly two candidates");
  r.candidates = {c[0], c[1]};
  return r;
}

json qa_answer_to_json(const QaAnswer& a) {
  json j{{"answer_text", a.answer_text}};
  if (!a.scores.empty()) j["scores"] = a.scores;
  return j;
}

QaAnswer qa_answer_from_json(const json& j) {
  QaAnswer a;
  a.answer_text = field<std::string>(j, "answer_text");
  if (j.contains("scores") && !j.at("scores").is_null()) a.scores = field<std::vector<double>>(j, "scores");
  return a;
}

HttpQaModel::HttpQaModel(HttpQaEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.base_url.empty()) throw ConfigError("QA endpoint needs a base_url");
}

QaAnswer HttpQaModel::answer(const QaRequest& request) {
  return qa_answer_from_json(
      http_post_json(endpoint_.base_url, "/v1/qa", qa_request_to_json(request), endpoint_.timeout_ms, endpoint_.auth_env));
}

std::optional<json> HttpQaModel::metadata() {
  try {
    return http_get_json(endpoint_.base_url, "/v1/metadata", endpoint_.timeout_ms, endpoint_.auth_env);
  } catch (const ProtocolError& e) {
    log_info(std::string("QA endpoint has no metadata: ") + e.what());
    return std::nullopt;
  }
}

CachedQaModel::CachedQaModel(std::shared_ptr<QaModel> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

QaAnswer CachedQaModel::answer(const QaRequest& request) {
  const json material{{"kind", "qa"}, {"model", inner_->model_id()}, {"request", qa_request_to_json(request)}};
  const std::string key = sha256_hex(material.dump());
  const auto path = dir_ / (key + ".json");
  if (std::filesystem::exists(path)) {
    try {
      const json blob = json::parse(read_file(path));
      if (blob.at("key").get<std::string>() == key) return qa_answer_from_json(blob.at("answer"));
    } catch (const std::exception& e) {
      log_warning("ignoring unreadable QA cache entry " + path.string() + ": " + e.what());
    }
  }
  QaAnswer a = inner_->answer(request);
  write_file_atomic(path, json{{"key", key}, {"answer", qa_answer_to_json(a)}}.dump());
  return a;
}

RoleConsistentQa::RoleConsistentQa(std::vector<SwapTemplate> templates, std::string id)
    : templates_(std::move(templates)), id_(std::move(id)) {}

QaAnswer RoleConsistentQa::answer(const QaRequest& request) {
  for (const auto& t : templates_) {
    if (t.format != request.format) continue;
    const auto inst = expand_instance(t, request.candidates[0], request.candidates[1]);
    if (inst.context == request.context && inst.question == request.question) return {inst.gold_name, {}};
  }
  return {"unknown", {}};
}

QaAnswer SlotOneQa::answer(const QaRequest& request) {
  return {std::min(request.candidates[0], request.candidates[1]), {}};
}

FixatedQa::FixatedQa(std::string name, std::vector<SwapTemplate> templates, std::string id)
    : name_(std::move(name)), fallback_(std::move(templates)), id_(std::move(id)) {}

QaAnswer FixatedQa::answer(const QaRequest& request) {
  if (request.candidates[0] == name_ || request.candidates[1] == name_) return {name_, {}};
  return fallback_.answer(request);
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::flip: return "flip";
    case Outcome::stable: return "stable";
    case Outcome::invalid: return "invalid";
    case Outcome::unscored: return "unscored";
  }
  return "unscored";
}

Outcome parse_outcome(std::string_view s) {
  for (auto o : {Outcome::flip, Outcome::stable, Outcome::invalid, Outcome::unscored}) {
    if (s == to_string(o)) return o;
  }
  throw ValidationError("unknown outcome '" + std::string(s) + "'");
}

PairOutcome is_flip(QaModel& qa, const SwapTemplate& t, const std::string& name_a, const std::string& name_b,
                    const RetryPolicy& retry) {
  const auto [original, swapped] = expand_swap(t, name_a, name_b);
  PairOutcome p;
  p.template_id = t.template_id;
  p.answer_slot = t.answer_slot;
  p.name_a = name_a;
  p.name_b = name_b;
  try {
    p.answer_original = with_retries(retry, [&] { return qa.answer(QaRequest::from(original)); }).answer_text;
    p.answer_swapped = with_retries(retry, [&] { return qa.answer(QaRequest::from(swapped)); }).answer_text;
  } catch (const TransportError& e) {
    p.error = e.what();
    return p;
  } catch (const ProtocolError& e) {
    p.error = e.what();
    return p;
  }
  p.resolved_original = resolve_predicted_slot(p.answer_original, original);
  p.resolved_swapped = resolve_predicted_slot(p.answer_swapped, swapped);
  if (p.resolved_original == Resolution::invalid || p.resolved_swapped == Resolution::invalid) {
    p.outcome = Outcome::invalid;
  } else {
    p.outcome = p.resolved_original != p.resolved_swapped ? Outcome::flip : Outcome::stable;
  }
  return p;
}

std::vector<std::string> top_templates(const std::map<std::string, Rate>& per_template, std::size_t k) {
  std::vector<std::pair<std::string, double>> rates;
  for (const auto& [id, r] : per_template) {
    if (r.total > 0) rates.emplace_back(id, r.pct());
  }
  std::stable_sort(rates.begin(), rates.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < rates.size() && i < k; ++i) out.push_back(rates[i].first);
  return out;
}

FlipReport aggregate_flips(std::string model_id, std::vector<PairOutcome> details) {
  FlipReport r;
  r.model_id = std::move(model_id);
  for (const auto& p : details) {
    auto& tmpl = r.per_template[p.template_id];
    if (p.outcome == Outcome::unscored) {
      ++r.unscored;
      continue;
    }
    ++r.invalid.total;
    if (p.outcome == Outcome::invalid) ++r.invalid.hits;
    if (p.outcome == Outcome::flip || p.outcome == Outcome::stable) {
      const bool flip = p.outcome == Outcome::flip;
      for (auto* rate : {&r.overall, &tmpl, &r.per_name[p.name_a], &r.per_name[p.name_b]}) {
        ++rate->total;
        if (flip) ++rate->hits;
      }
    }
    // Instance level: original puts a in slot 1, swapped puts b there.
    const auto gold = as_resolution(p.answer_slot);
    for (const auto& [resolved, slot1, slot2] :
         {std::tuple{p.resolved_original, p.name_a, p.name_b}, std::tuple{p.resolved_swapped, p.name_b, p.name_a}}) {
      if (resolved == Resolution::invalid) continue;
      const bool correct = resolved == gold;
      for (auto* acc : {&r.probe_accuracy, &r.per_slot_accuracy[{slot1, Slot::name1}],
                        &r.per_slot_accuracy[{slot2, Slot::name2}]}) {
        ++acc->valid;
        if (correct) ++acc->correct;
      }
    }
  }
  const auto top = top_templates(r.per_template);
  if (!top.empty()) {
    double sum = 0.0;
    for (const auto& id : top) sum += r.per_template.at(id).pct();
    r.top5_flip_pct = sum / static_cast<double>(top.size());
  }
  r.details = std::move(details);
  return r;
}

std::vector<std::pair<std::string, std::string>> sample_pairs(const NameBank& bank, std::uint64_t budget,
                                                              std::uint64_t seed) {
  std::vector<std::pair<std::string, std::string>> all;
  for (const auto& [a, b] : same_gender_pairs(filter_bank(bank, ProbeFlag::swap))) all.emplace_back(a.given_name, b.given_name);
  if (budget == 0 || budget >= all.size()) return all;
  auto order = seeded_permutation(all.size(), seed);
  order.resize(budget);
  std::sort(order.begin(), order.end());
  std::vector<std::pair<std::string, std::string>> out;
  for (auto i : order) out.push_back(all[i]);
  return out;
}

FlipReport run_swap_probe(QaModel& qa, const std::vector<SwapTemplate>& templates, const NameBank& bank,
                          const SwapOptions& options) {
  if (templates.empty()) throw ValidationError("swap probe needs at least one template");
  for (const auto& t : templates) t.validate();
  const auto pairs = sample_pairs(bank, options.pair_budget, options.seed);
  if (pairs.empty()) throw ValidationError("swap probe needs two same-gender names with the swap flag");
  std::vector<PairOutcome> details(templates.size() * pairs.size());
  parallel_for(details.size(), options.workers, [&](std::size_t i) {
    const auto& t = templates[i / pairs.size()];
    const auto& [a, b] = pairs[i % pairs.size()];
    details[i] = is_flip(qa, t, a, b, options.retry);
  });
  auto report = aggregate_flips(qa.model_id(), std::move(details));
  if (report.unscored > 0) log_warning(std::to_string(report.unscored) + " swap pairs could not be scored");
  report.task_metadata = qa.metadata();
  return report;
}

json to_json(const PairOutcome& p) {
  json j{{"template_id", p.template_id},
         {"answer_slot", to_string(p.answer_slot)},
         {"name_a", p.name_a},
         {"name_b", p.name_b},
         {"answer_original", p.answer_original},
         {"answer_swapped", p.answer_swapped},
         {"resolved_original", to_string(p.resolved_original)},
         {"resolved_swapped", to_string(p.resolved_swapped)},
         {"outcome", to_string(p.outcome)}};
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

PairOutcome pair_outcome_from_json(const json& j) {
  try {
    PairOutcome p;
    p.template_id = j.at("template_id").get<std::string>();
    p.answer_slot = parse_slot(j.at("answer_slot").get<std::string>());
    p.name_a = j.at("name_a").get<std::string>();
    p.name_b = j.at("name_b").get<std::string>();
    p.answer_original = j.at("answer_original").get<std::string>();
    p.answer_swapped = j.at("answer_swapped").get<std::string>();
    p.resolved_original = parse_resolution(j.at("resolved_original").get<std::string>());
    p.resolved_swapped = parse_resolution(j.at("resolved_swapped").get<std::string>());
    p.outcome = parse_outcome(j.at("outcome").get<std::string>());
    p.error = j.value("error", "");
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed swap detail row: ") + e.what());
  }
}

}  // namespace nameprobe::swap
