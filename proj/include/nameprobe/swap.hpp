#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nameprobe/namebank.hpp"
#include "nameprobe/retry.hpp"

namespace nameprobe::swap {

enum class Slot { name1, name2 };
enum class QaFormat { squad_qa, winogrande_fitb };

std::string_view to_string(Slot s);  // "NAME1" / "NAME2"
Slot parse_slot(std::string_view s);
std::string_view to_string(QaFormat f);
QaFormat parse_format(std::string_view s);

struct SwapTemplate {
  std::string template_id;
  std::string context;   // [NAME1] and [NAME2] each at least once
  std::string question;  // may also use the markers
  Slot answer_slot = Slot::name1;
  QaFormat format = QaFormat::squad_qa;

  void validate() const;  // ValidationError
  friend bool operator==(const SwapTemplate&, const SwapTemplate&) = default;
};

struct TemplateSet {
  std::vector<SwapTemplate> templates;
  std::vector<std::string> placeholders;  // ids listed but without published text
};

// JSON list of templates. Entries with "placeholder": true carry only an id
// and are skipped.
TemplateSet parse_templates(const nlohmann::json& j);
TemplateSet load_templates(const std::filesystem::path& path);
nlohmann::json to_json(const SwapTemplate& t);

struct SwapInstance {
  std::string template_id;
  std::string name_in_slot1;
  std::string name_in_slot2;
  std::string context;
  std::string question;
  QaFormat format = QaFormat::squad_qa;
  std::string gold_name;

  friend bool operator==(const SwapInstance&, const SwapInstance&) = default;
};

SwapInstance expand_instance(const SwapTemplate& t, const std::string& slot1, const std::string& slot2);
// (original with a in slot 1, swapped with b in slot 1). Equal names are a
// ValidationError.
std::pair<SwapInstance, SwapInstance> expand_swap(const SwapTemplate& t, const std::string& name_a,
                                                  const std::string& name_b);

enum class Resolution { slot1, slot2, invalid };
std::string_view to_string(Resolution r);

// Exactly one of the two names as a whole word (case-insensitive) resolves to
// its slot; both or neither is invalid.
Resolution resolve_predicted_slot(std::string_view answer_text, const SwapInstance& instance);

struct QaRequest {
  std::string context;
  std::string question;
  QaFormat format = QaFormat::squad_qa;
  std::array<std::string, 2> candidates;  // slot order

  static QaRequest from(const SwapInstance& instance);
  friend bool operator==(const QaRequest&, const QaRequest&) = default;
};

struct QaAnswer {
  std::string answer_text;
  std::vector<double> scores;  // optional, per candidate
  friend bool operator==(const QaAnswer&, const QaAnswer&) = default;
};

class QaModel {
 public:
  virtual ~QaModel() = default;
  virtual std::string model_id() const = 0;
  virtual QaAnswer answer(const QaRequest& request) = 0;
  // Endpoint-reported facts such as main-task dev accuracy, if any.
  virtual std::optional<nlohmann::json> metadata() { return std::nullopt; }
};

nlohmann::json qa_request_to_json(const QaRequest& r);
QaRequest qa_request_from_json(const nlohmann::json& j);  // ProtocolError
nlohmann::json qa_answer_to_json(const QaAnswer& a);
QaAnswer qa_answer_from_json(const nlohmann::json& j);  // ProtocolError

struct HttpQaEndpoint {
  std::string base_url;
  std::string model_id;
  int timeout_ms = 30000;
  std::string auth_env = "NAMEPROBE_API_TOKEN";
};

// POST <base>/v1/qa; GET <base>/v1/metadata (a 404 means no metadata).
class HttpQaModel : public QaModel {
 public:
  explicit HttpQaModel(HttpQaEndpoint endpoint);
  std::string model_id() const override { return endpoint_.model_id; }
  QaAnswer answer(const QaRequest& request) override;
  std::optional<nlohmann::json> metadata() override;

 private:
  HttpQaEndpoint endpoint_;
};

// Content-addressed answer cache in front of another model.
class CachedQaModel : public QaModel {
 public:
  CachedQaModel(std::shared_ptr<QaModel> inner, std::filesystem::path dir);
  std::string model_id() const override { return inner_->model_id(); }
  QaAnswer answer(const QaRequest& request) override;
  std::optional<nlohmann::json> metadata() override { return inner_->metadata(); }

 private:
  std::shared_ptr<QaModel> inner_;
  std::filesystem::path dir_;
};

// Scripted answerers. Role-consistent answers the gold slot's name, found by
// matching the request against the known templates. The slot-1 answerer
// answers the name that held [NAME1] in the pair's original ordering; the
// probe always presents the lexicographically smaller name there first, so it
// answers the smaller candidate in both orderings. The fixated answerer
// answers `name` whenever it is a candidate and otherwise behaves
// role-consistently.
class RoleConsistentQa : public QaModel {
 public:
  RoleConsistentQa(std::vector<SwapTemplate> templates, std::string id = "mock-role-consistent");
  std::string model_id() const override { return id_; }
  QaAnswer answer(const QaRequest& request) override;

 private:
  std::vector<SwapTemplate> templates_;
  std::string id_;
};

class SlotOneQa : public QaModel {
 public:
  explicit SlotOneQa(std::string id = "mock-slot1") : id_(std::move(id)) {}
  std::string model_id() const override { return id_; }
  QaAnswer answer(const QaRequest& request) override;

 private:
  std::string id_;
};

class FixatedQa : public QaModel {
 public:
  FixatedQa(std::string name, std::vector<SwapTemplate> templates, std::string id = "mock-fixated");
  std::string model_id() const override { return id_; }
  QaAnswer answer(const QaRequest& request) override;

 private:
  std::string name_;
  RoleConsistentQa fallback_;
  std::string id_;
};

enum class Outcome { flip, stable, invalid, unscored };
std::string_view to_string(Outcome o);
Outcome parse_outcome(std::string_view s);

struct PairOutcome {
  std::string template_id;
  Slot answer_slot = Slot::name1;
  std::string name_a;  // slot 1 in the original ordering
  std::string name_b;
  std::string answer_original;
  std::string answer_swapped;
  Resolution resolved_original = Resolution::invalid;
  Resolution resolved_swapped = Resolution::invalid;
  Outcome outcome = Outcome::unscored;
  std::string error;

  friend bool operator==(const PairOutcome&, const PairOutcome&) = default;
};

// Queries both orderings; endpoint errors are retried, then mark the pair
// unscored.
PairOutcome is_flip(QaModel& qa, const SwapTemplate& t, const std::string& name_a, const std::string& name_b,
                    const RetryPolicy& retry = {});

struct SlotAccuracy {
  std::uint64_t correct = 0;
  std::uint64_t valid = 0;
  double pct() const { return valid == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(valid); }
  friend bool operator==(const SlotAccuracy&, const SlotAccuracy&) = default;
};

struct Rate {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;
  double pct() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total); }
  friend bool operator==(const Rate&, const Rate&) = default;
};

struct FlipReport {
  std::string model_id;
  Rate overall;                       // flips / (flip + stable)
  double top5_flip_pct = 0.0;         // mean of the 5 highest per-template rates
  std::map<std::string, Rate> per_template;
  std::map<std::string, Rate> per_name;
  std::map<std::pair<std::string, Slot>, SlotAccuracy> per_slot_accuracy;
  SlotAccuracy probe_accuracy;        // valid answers equal to gold
  Rate invalid;                       // invalid pairs / scored-or-invalid pairs
  std::uint64_t unscored = 0;
  std::optional<nlohmann::json> task_metadata;
  std::vector<PairOutcome> details;
};

// Template ids of the (at most) five highest per-template rates; ties by id.
std::vector<std::string> top_templates(const std::map<std::string, Rate>& per_template, std::size_t k = 5);

FlipReport aggregate_flips(std::string model_id, std::vector<PairOutcome> details);

struct SwapOptions {
  std::uint64_t pair_budget = 0;  // 0 or >= all pairs: exhaustive
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  RetryPolicy retry{};
};

// Same-gender pairs of swap-flagged names, sampled by seed when the budget
// is smaller than the population; result in lexicographic pair order.
std::vector<std::pair<std::string, std::string>> sample_pairs(const NameBank& bank, std::uint64_t budget,
                                                              std::uint64_t seed);

FlipReport run_swap_probe(QaModel& qa, const std::vector<SwapTemplate>& templates, const NameBank& bank,
                          const SwapOptions& options = {});

nlohmann::json to_json(const PairOutcome& p);
PairOutcome pair_outcome_from_json(const nlohmann::json& j);

}  // namespace nameprobe::swap
