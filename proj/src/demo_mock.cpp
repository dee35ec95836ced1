#include "nameprobe/demo_mock.hpp"

#include <algorithm>
#include <map>

#include "nameprobe/digest.hpp"
#include "nameprobe/grounding.hpp"
#include "nameprobe/recovery.hpp"

namespace nameprobe::demo {

namespace {

constexpr const char* kShared[] = {
    "person", "friend", "student", "neighbor", "writer", "teacher", "parent", "worker", "leader", "member",
    "player", "driver", "singer", "reader", "runner", "cook", "artist", "doctor", "lawyer", "farmer",
    "who", "and", "the", "with", "from", "in", "town", "city", "family", "school",
    "work", "home", "always", "often", "never", "very", "quite", "really", "new", "old"};

constexpr const char* kDistinct[] = {
    "guitar", "harbor", "lantern", "meadow", "violin", "canyon", "orchard", "glacier", "compass", "velvet",
    "marble", "falcon", "cedar", "thunder", "saffron", "pebble", "quartz", "tundra", "willow", "ember",
    "garnet", "lagoon", "summit", "prairie", "crimson", "bamboo", "tango", "nectar", "oasis", "ripple",
    "basalt", "cobalt", "dune", "fjord", "geyser", "hazel", "indigo", "jasmine", "kelp", "lotus",
    "mango", "nebula", "olive", "pepper", "quill", "raven", "sierra", "tulip", "umber", "walnut",
    "yarrow", "zephyr", "anchor", "beacon", "cactus", "dolphin", "easel", "fable", "gable", "heron"};

constexpr const char* kNegative[] = {"bad", "cruel", "angry", "corrupt", "liar", "nasty"};
constexpr const char* kPositive[] = {"kind", "good", "honest", "gentle", "brave", "lovely"};

std::uint64_t hash_of(const std::string& s) {
  const auto hex = sha256_hex(s);
  return std::stoull(hex.substr(0, 15), nullptr, 16);
}

double unit(std::uint64_t h) { return static_cast<double>(h % 10000) / 10000.0; }

double match_rate(grounding::PromptKind k) {
  switch (k) {
    case grounding::PromptKind::minimal: return 0.25;
    case grounding::PromptKind::news: return 0.6;
    case grounding::PromptKind::history: return 0.5;
    case grounding::PromptKind::informal: return 0.15;
  }
  return 0.0;
}

std::map<std::string, double> normalized(std::map<std::string, double> weights) {
  double total = 0.0;
  for (const auto& [w, v] : weights) total += v;
  for (auto& [w, v] : weights) v /= total;
  return weights;
}

std::vector<lm::MockRule> grounding_rules(const NameRecord& r) {
  std::vector<lm::MockRule> rules;
  std::vector<std::string> surnames;
  if (r.media_last_name) surnames.push_back(*r.media_last_name);
  if (r.history_last_name) surnames.push_back(*r.history_last_name);
  if (surnames.empty()) return rules;
  for (auto kind : grounding::kAllPromptKinds) {
    const auto h = hash_of("ground|" + r.given_name + "|" + std::string(to_string(kind)));
    const auto& surname = surnames[(h >> 32) % surnames.size()];
    const bool emit = unit(h) < match_rate(kind);
    std::map<std::string, double> dist = emit ? std::map<std::string, double>{{surname, 0.55}, {"said", 0.25}, {"is", 0.2}}
                                              : std::map<std::string, double>{{"said", 0.5}, {"is", 0.3}, {surname, 0.2}};
    rules.push_back({grounding::expand_prompt(kind, r.given_name), std::move(dist), ""});
  }
  return rules;
}

lm::MockRule ending_rule(const NameRecord& r) {
  std::map<std::string, double> w;
  for (const char* s : kShared) w[s] = 1.0;
  const auto h = hash_of("ending|" + r.given_name);
  const double strength = r.is_media_name() ? 4.0 : 0.2 + 1.5 * unit(h);
  constexpr std::size_t n_distinct = std::size(kDistinct);
  for (std::size_t i = 0; i < 4; ++i) w[kDistinct[mix64(h + i) % n_distinct]] += strength;
  if (r.media_last_name) w[*r.media_last_name] += 4.0;
  const double neg = 3.0 * unit(mix64(h ^ 0x5eed));
  const double pos = 3.0 * unit(mix64(h ^ 0xf00d));
  w[kNegative[mix64(h + 11) % std::size(kNegative)]] += neg + 0.01;
  w[kPositive[mix64(h + 13) % std::size(kPositive)]] += pos + 0.01;
  recovery::EndingCorpus probe;
  probe.given_name = r.given_name;
  return {probe.prompt(), normalized(std::move(w)), ""};
}

class DemoQa : public swap::QaModel {
 public:
  DemoQa(std::vector<std::string> fixations, std::vector<swap::SwapTemplate> templates)
      : fixations_(std::move(fixations)), fallback_(std::move(templates)) {}
  std::string model_id() const override { return "demo-qa"; }
  swap::QaAnswer answer(const swap::QaRequest& request) override {
    for (const auto& f : fixations_)
      if (request.candidates[0] == f || request.candidates[1] == f) return {f, {}};
    return fallback_.answer(request);
  }
  std::optional<nlohmann::json> metadata() override { return nlohmann::json{{"task", "demo"}}; }

 private:
  std::vector<std::string> fixations_;
  swap::RoleConsistentQa fallback_;
};

}  // namespace

std::shared_ptr<lm::MockModel> demo_model(const NameBank& bank, std::string model_id) {
  std::vector<lm::MockRule> rules;
  for (const auto& r : bank.records()) {
    for (auto& g : grounding_rules(r)) rules.push_back(std::move(g));
    rules.push_back(ending_rule(r));
  }
  return std::make_shared<lm::MockModel>(std::move(model_id), std::move(rules));
}

std::shared_ptr<swap::QaModel> demo_qa(const NameBank& bank, const std::vector<swap::SwapTemplate>& templates) {
  std::map<Gender, std::pair<std::uint64_t, std::string>> best;
  for (const auto& r : filter_bank(bank, ProbeFlag::swap)) {
    if (!r.media_frequency) continue;
    auto& b = best[r.gender];
    if (*r.media_frequency > b.first) b = {*r.media_frequency, r.given_name};
  }
  std::vector<std::string> fixations;
  for (const auto& [g, b] : best) fixations.push_back(b.second);
  return std::make_shared<DemoQa>(std::move(fixations), templates);
}

std::shared_ptr<sentiment::SentimentProvider> demo_sentiment() {
  return std::make_shared<sentiment::LexiconProvider>(std::set<std::string>(std::begin(kNegative), std::end(kNegative)),
                                                      std::set<std::string>(std::begin(kPositive), std::end(kPositive)),
                                                      "demo-lexicon");
}

}  // namespace nameprobe::demo
