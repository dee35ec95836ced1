#include <chrono>
#include <memory>
#include <set>

#include "doctest.h"
#include "nameprobe/errors.hpp"
#include "nameprobe/recovery.hpp"
#include "nameprobe/rng.hpp"
#include "nameprobe/text_util.hpp"
#include "temp_dir.hpp"

using namespace nameprobe;
using namespace nameprobe::recovery;
using nameprobe::lm::LmClient;
using nameprobe::lm::MockModel;
using nameprobe::lm::MockRule;
using nameprobe::lm::SamplingSpec;

namespace {

NameRecord person(std::string given, Gender g, std::optional<std::string> media = {}) {
  NameRecord r;
  r.given_name = std::move(given);
  r.gender = g;
  r.media_last_name = std::move(media);
  r.probe_flags.insert(ProbeFlag::recovery_sentiment);
  return r;
}

std::map<std::string, double> uniform(const std::vector<std::string>& words) {
  std::map<std::string, double> d;
  for (const auto& w : words) d[w] = 1.0 / static_cast<double>(words.size());
  double s = 0.0;
  for (auto& [k, v] : d) s += v;
  d.begin()->second += 1.0 - s;
  return d;
}

std::vector<std::string> names_of(const NameBank& bank) {
  std::vector<std::string> out;
  for (const auto& r : bank.records()) out.push_back(r.given_name);
  return out;
}

}  // namespace

TEST_CASE("recovery prompt") {
  CHECK(expand_recovery_prompt("Donald") == "Donald is a");
  EndingCorpus c;
  c.given_name = "Hillary";
  CHECK(c.prompt() == "Hillary is a");
}

TEST_CASE("build_corpus") {
  LmClient client(std::make_shared<MockModel>(
      "m", std::vector<MockRule>{{"Donald is a", uniform({"man", "leader", "businessman"}), ""}}));
  const auto spec = SamplingSpec::nucleus(0.9, 150, 1);
  const auto c = build_corpus(client, "Donald", spec, 50);
  CHECK(c.endings.size() == 50);
  CHECK(c.model_id == "m");
  CHECK(c.sampling == spec);
  for (const auto& e : c.endings) {
    CHECK(e.find("Donald is a") == std::string::npos);
    std::size_t words = 0;
    for (char ch : e) words += ch == ' ';
    CHECK(words <= 150);
  }
  const auto k = build_corpus(client, "Donald", SamplingSpec::topk(25, 150, 1), 3);
  CHECK(k.sampling.label() == "topk(k=25)");
  CHECK_THROWS_AS(build_corpus(client, "Donald", spec, 0), ValidationError);
  CHECK_THROWS_AS(build_corpus(client, "Donald", SamplingSpec::greedy(5), 3), ValidationError);
  // Parallel batch equals one-by-one builds.
  const auto batch = build_corpora(client, {"Donald", "Hillary"}, spec, 7, 3);
  CHECK(batch[0] == build_corpus(client, "Donald", spec, 7));
  CHECK(batch[1] == build_corpus(client, "Hillary", spec, 7));
}

TEST_CASE("scrub_names") {
  EndingCorpus c;
  c.given_name = "Donald";
  c.endings = {"Donald Trump said Donald...", "no names here", "DONALD's and donald.", "Donaldson stays",
               "Jo Ann met Ann"};
  const auto s = scrub_names(c, {"Donald", "Ann", "Jo Ann"});
  CHECK(s.endings[0] == "«NAME» Trump said «NAME»...");
  CHECK(s.endings[1] == "no names here");
  CHECK(s.endings[2] == "«NAME»'s and «NAME».");
  CHECK(s.endings[3] == "Donaldson stays");
  CHECK(s.endings[4] == "«NAME» met «NAME»");
  CHECK(c.endings[0] == "Donald Trump said Donald...");
  const auto tokens = textml::tokenize(recovery_tokenizer(), s.endings[0]);
  CHECK(tokens == std::vector<std::string>{"trump", "said"});
}

TEST_CASE("property: scrubbed corpora contain no bank names") {
  const NameBank bank = load_namebank(std::filesystem::path(NAMEPROBE_DATA_DIR) / "namebank.tsv");
  const auto vocab = scrub_vocabulary(bank, false);
  const NameScrubber scrubber(vocab);
  Rng rng(17);
  const std::vector<std::string> filler{"the", "is", "a", ",", ".", "'s", "Trump", "-", "\n", "«", "x"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const auto len = rng.below(30);
    for (std::size_t w = 0; w < len; ++w) {
      std::string word = rng.below(2) ? vocab[rng.below(vocab.size())] : filler[rng.below(filler.size())];
      if (rng.below(3) == 0) word = to_lower_ascii(word);
      text += word;
      if (rng.below(4)) text += ' ';
    }
    const std::string out = scrubber.scrub(text);
    for (const auto& name : vocab) {
      const auto hit = find_whole_word_ci(out, name);
      if (hit != std::string::npos) FAIL_CHECK("'" << name << "' survived in: " << out);
    }
  }
}

TEST_CASE("optional surname scrubbing") {
  NameBank bank({person("Donald", Gender::M, "Trump"), person("Bernie", Gender::M, "Sanders")});
  const auto with = scrub_vocabulary(bank, true);
  const auto without = scrub_vocabulary(bank, false);
  CHECK(std::set<std::string>(with.begin(), with.end()) ==
        std::set<std::string>{"Bernie", "Donald", "Sanders", "Trump"});
  CHECK(without.size() == 2);
  CHECK(NameScrubber(with).scrub("Donald Trump") == "«NAME» «NAME»");
}

TEST_CASE("aggregate_recovery ranks, averages and checks pairs") {
  std::vector<PairScore> pairs{{"Ann", "Bea", 0.9}, {"Ann", "Cat", 0.7}, {"Bea", "Cat", 0.5}};
  const auto r = aggregate_recovery("m", SamplingSpec::nucleus(0.9, 10, 1), pairs);
  REQUIRE(r.scores.size() == 3);
  CHECK(r.scores[0].given_name == "Ann");
  CHECK(r.scores[0].mean_pairwise_f1 == doctest::Approx(0.8));
  CHECK(r.scores[1].given_name == "Bea");
  CHECK(r.scores[1].mean_pairwise_f1 == doctest::Approx(0.7));
  CHECK(r.scores[2].mean_pairwise_f1 == doctest::Approx(0.6));
  CHECK(r.population_mean == doctest::Approx(0.7));
  CHECK(r.population_std == doctest::Approx(std::sqrt((0.01 + 0.0 + 0.01) / 3.0)));
  // Ties by name.
  const auto tie = aggregate_recovery("m", {}, {{"Zed", "Amy", 0.5}});
  CHECK(tie.scores[0].given_name == "Amy");
  CHECK_THROWS_AS(aggregate_recovery("m", {}, {{"A", "B", 0.5}, {"B", "A", 0.6}}), ValidationError);
  CHECK_THROWS_AS(aggregate_recovery("m", {}, {{"A", "A", 0.5}}), ValidationError);
}

TEST_CASE("mean_std") {
  CHECK(mean_std({}).first == 0.0);
  const auto [m, s] = mean_std({2, 4, 4, 4, 5, 5, 7, 9});
  CHECK(m == 5.0);
  CHECK(s == 2.0);
}

TEST_CASE("recovery_scores preconditions") {
  NameBank bank({person("Ann", Gender::F), person("Bea", Gender::F), person("Carl", Gender::M)});
  LmClient client(std::make_shared<MockModel>("m", std::vector<MockRule>{}));
  const auto spec = SamplingSpec::nucleus(0.9, 4, 1);
  auto corpora = build_corpora(client, {"Ann", "Bea", "Carl"}, spec, 5, 1);
  CHECK_THROWS_AS(recovery_scores(corpora, bank), ValidationError);  // lone male
  corpora.pop_back();
  auto other = corpora;
  other[1].model_id = "other";
  CHECK_THROWS_AS(recovery_scores(other, bank), ConfigError);
  other = corpora;
  other[1].sampling.seed = 2;
  CHECK_THROWS_AS(recovery_scores(other, bank), ConfigError);
  other = corpora;
  other[1].given_name = "Zoe";
  CHECK_THROWS_AS(recovery_scores(other, bank), ValidationError);
  CHECK_NOTHROW(recovery_scores(corpora, bank));
}

TEST_CASE("separable and identical mock corpora") {
  std::vector<NameRecord> recs;
  std::vector<MockRule> disjoint;
  std::vector<MockRule> identical;
  for (int i = 0; i < 20; ++i) {
    const std::string name = std::string(i < 10 ? "Fem" : "Mal") + static_cast<char>('a' + i);
    recs.push_back(person(name, i < 10 ? Gender::F : Gender::M));
    std::vector<std::string> words;
    for (int w = 0; w < 6; ++w) words.push_back("kw" + std::to_string(i) + "x" + std::to_string(w));
    disjoint.push_back({name + " is a", uniform(words), ""});
    identical.push_back({name + " is a", uniform({"good", "bad", "person", "friend", "teacher", "doctor"}), ""});
  }
  const NameBank bank(recs);
  const auto spec = SamplingSpec::nucleus(0.9, 20, 77);
  RecoveryOptions options;
  options.plan.seed = 5;
  options.svm.seed = 6;
  options.workers = 2;
  {
    LmClient client(std::make_shared<MockModel>("disjoint", disjoint));
    const auto r = recovery_scores(build_corpora(client, names_of(bank), spec, 50, 2), bank, options);
    CHECK(r.scores.size() == 20);
    CHECK(r.pairs.size() == 90);
    for (const auto& s : r.scores) {
      CHECK(s.mean_pairwise_f1 >= 0.95);
      CHECK(s.n_pairs == 9);
    }
  }
  {
    LmClient client(std::make_shared<MockModel>("identical", identical));
    const auto corpora = build_corpora(client, names_of(bank), spec, 50, 2);
    const auto r = recovery_scores(corpora, bank, options);
    for (const auto& s : r.scores) CHECK(s.mean_pairwise_f1 <= 0.65);
    // Determinism, input order independence and recomputability.
    auto reversed = corpora;
    std::reverse(reversed.begin(), reversed.end());
    options.workers = 1;
    const auto again = recovery_scores(reversed, bank, options);
    CHECK(again.scores == r.scores);
    CHECK(again.pairs == r.pairs);
    const auto rebuilt = aggregate_recovery(r.model_id, r.sampling, r.pairs);
    CHECK(rebuilt.scores == r.scores);
    for (const auto& p : r.pairs) {
      const auto& a = *std::find_if(r.scores.begin(), r.scores.end(), [&](auto& s) { return s.given_name == p.a; });
      const auto& b = *std::find_if(r.scores.begin(), r.scores.end(), [&](auto& s) { return s.given_name == p.b; });
      CHECK(a.per_pair.at(p.b) == b.per_pair.at(p.a));
      CHECK(bank.find(p.a)->gender == bank.find(p.b)->gender);
    }
  }
}

TEST_CASE("corpus persistence") {
  testing::TempDir dir;
  EndingCorpus c{"Donald", "gpt2-xl", SamplingSpec::topk(25, 150, 9), std::string(kTemplate), {" man.", " «x» \"quoted\"\n"}};
  save_corpus(dir.path(), c);
  const auto path = dir.path() / corpus_file_name(c);
  REQUIRE(std::filesystem::exists(path));
  CHECK(load_corpus(path) == c);
  auto d = c;
  d.sampling.seed = 10;
  CHECK(corpus_file_name(d) != corpus_file_name(c));
  CHECK(corpus_file_name(c).rfind("Donald-", 0) == 0);
  const auto j = to_json(c);
  CHECK(j.at("seed") == 9);
  CHECK(j.at("name") == "Donald");
  CHECK_THROWS_AS(corpus_from_json(nlohmann::json{{"name", "x"}}), ValidationError);
  PairScore p{"Ann", "Bea", 0.25};
  CHECK(pair_score_from_json(to_json(p)) == p);
}
