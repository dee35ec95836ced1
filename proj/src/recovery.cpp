#include "nameprobe/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/fs_util.hpp"
#include "nameprobe/parallel.hpp"
#include "nameprobe/text_util.hpp"
#include "nameprobe/wire.hpp"

namespace nameprobe::recovery {

using nlohmann::json;

namespace {

std::string first_word_lower(std::string_view s) {
  std::size_t n = 0;
  while (n < s.size() && is_word_byte(static_cast<unsigned char>(s[n]))) ++n;
  return to_lower_ascii(s.substr(0, n));
}

void require_sampled(const lm::SamplingSpec& sampling) {
  sampling.validate();
  if (!sampling.is_sampled()) throw ValidationError("ending corpora need nucleus or topk sampling");
}

}  // namespace

std::string expand_recovery_prompt(std::string_view given_name) {
  std::string out(kTemplate);
  out.replace(out.find("[NAME]"), 6, given_name);
  return out;
}

std::string EndingCorpus::prompt() const {
  std::string out = template_text;
  const auto pos = out.find("[NAME]");
  if (pos != std::string::npos) out.replace(pos, 6, given_name);
  return out;
}

EndingCorpus build_corpus(lm::LmClient& client, const std::string& given_name, const lm::SamplingSpec& sampling,
                          std::uint32_t count) {
  return build_corpora(client, {given_name}, sampling, count, 1).front();
}

std::vector<EndingCorpus> build_corpora(lm::LmClient& client, const std::vector<std::string>& names,
                                        const lm::SamplingSpec& sampling, std::uint32_t count, std::size_t workers) {
  require_sampled(sampling);
  if (count == 0) throw ValidationError("ending count must be positive");
  std::vector<EndingCorpus> out(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    out[i].given_name = names[i];
    out[i].model_id = client.model_id();
    out[i].sampling = sampling;
    out[i].endings.resize(count);
  }
  parallel_for(names.size() * count, workers, [&](std::size_t job) {
    auto& corpus = out[job / count];
    const auto index = static_cast<std::uint32_t>(job % count);
    corpus.endings[index] = client.sample_ending(corpus.prompt(), sampling, index);
  });
  return out;
}

NameScrubber::NameScrubber(const std::vector<std::string>& names) {
  for (const auto& raw : names) {
    const std::string name = to_lower_ascii(trim(raw));
    if (name.empty()) continue;
    const std::string first = first_word_lower(name);
    if (first.empty()) continue;
    auto& bucket = by_first_word_[first];
    if (std::find(bucket.begin(), bucket.end(), name) == bucket.end()) bucket.push_back(name);
  }
  for (auto& [first, bucket] : by_first_word_) {
    std::sort(bucket.begin(), bucket.end(),
              [](const std::string& a, const std::string& b) { return a.size() != b.size() ? a.size() > b.size() : a < b; });
  }
}

std::string NameScrubber::scrub(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const bool at_word_start =
        is_word_byte(static_cast<unsigned char>(text[i])) && (i == 0 || !is_word_byte(static_cast<unsigned char>(text[i - 1])));
    if (!at_word_start) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t word_end = i;
    while (word_end < text.size() && is_word_byte(static_cast<unsigned char>(text[word_end]))) ++word_end;
    std::size_t replaced = 0;
    const auto it = by_first_word_.find(to_lower_ascii(text.substr(i, word_end - i)));
    if (it != by_first_word_.end()) {
      for (const auto& name : it->second) {
        if (i + name.size() > text.size() || !iequals(text.substr(i, name.size()), name)) continue;
        const std::size_t end = i + name.size();
        if (end < text.size() && is_word_byte(static_cast<unsigned char>(text[end]))) continue;
        replaced = name.size();
        break;
      }
    }
    if (replaced > 0) {
      out += kPlaceholder;
      i += replaced;
    } else {
      out.append(text.substr(i, word_end - i));
      i = word_end;
    }
  }
  return out;
}

EndingCorpus NameScrubber::scrub(const EndingCorpus& corpus) const {
  EndingCorpus out = corpus;
  for (auto& e : out.endings) e = scrub(e);
  return out;
}

EndingCorpus scrub_names(const EndingCorpus& corpus, const std::vector<std::string>& names) {
  return NameScrubber(names).scrub(corpus);
}

std::vector<std::string> scrub_vocabulary(const NameBank& bank, bool include_surnames) {
  std::set<std::string> names;
  for (const auto& r : bank.records()) {
    names.insert(r.given_name);
    if (!include_surnames) continue;
    if (r.media_last_name) names.insert(*r.media_last_name);
    if (r.history_last_name) names.insert(*r.history_last_name);
  }
  return {names.begin(), names.end()};
}

textml::TokenizerConfig recovery_tokenizer() {
  textml::TokenizerConfig config;
  config.stop_list.insert(to_lower_ascii(kPlaceholder));
  return config;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

RecoveryResult aggregate_recovery(std::string model_id, lm::SamplingSpec sampling, std::vector<PairScore> pairs) {
  std::sort(pairs.begin(), pairs.end(),
            [](const PairScore& x, const PairScore& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  std::map<std::string, RecoveryScore> by_name;
  for (const auto& p : pairs) {
    if (p.a == p.b) throw ValidationError("pair score for '" + p.a + "' against itself");
    for (const auto& [self, other] : {std::pair{p.a, p.b}, std::pair{p.b, p.a}}) {
      auto& s = by_name[self];
      s.given_name = self;
      if (!s.per_pair.emplace(other, p.f1).second) {
        throw ValidationError("duplicate pair score for '" + self + "' and '" + other + "'");
      }
    }
  }
  RecoveryResult r;
  r.model_id = std::move(model_id);
  r.sampling = sampling;
  std::vector<double> means;
  for (auto& [name, s] : by_name) {
    double sum = 0.0;
    for (const auto& [partner, f1] : s.per_pair) sum += f1;
    s.n_pairs = s.per_pair.size();
    s.mean_pairwise_f1 = sum / static_cast<double>(s.n_pairs);
    means.push_back(s.mean_pairwise_f1);
    r.scores.push_back(std::move(s));
  }
  std::stable_sort(r.scores.begin(), r.scores.end(), [](const RecoveryScore& x, const RecoveryScore& y) {
    return x.mean_pairwise_f1 != y.mean_pairwise_f1 ? x.mean_pairwise_f1 > y.mean_pairwise_f1
                                                    : x.given_name < y.given_name;
  });
  std::tie(r.population_mean, r.population_std) = mean_std(means);
  r.pairs = std::move(pairs);
  return r;
}

RecoveryResult recovery_scores(const std::vector<EndingCorpus>& corpora, const NameBank& bank,
                               const RecoveryOptions& options) {
  if (corpora.empty()) throw ValidationError("recovery needs at least two corpora");
  const auto& model_id = corpora.front().model_id;
  const auto& sampling = corpora.front().sampling;
  std::vector<NameRecord> records;
  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    const auto& c = corpora[i];
    if (c.model_id != model_id || c.sampling != sampling || c.template_text != corpora.front().template_text) {
      throw ConfigError("corpus for '" + c.given_name + "' was generated with a different model or sampling spec");
    }
    const NameRecord* rec = bank.find(c.given_name);
    if (!rec) throw ValidationError("'" + c.given_name + "' is not in the name bank");
    if (!index_of.emplace(c.given_name, i).second) throw ValidationError("duplicate corpus for '" + c.given_name + "'");
    records.push_back(*rec);
  }
  for (auto g : {Gender::F, Gender::M}) {
    const auto n = std::count_if(records.begin(), records.end(), [&](const NameRecord& r) { return r.gender == g; });
    if (n == 1) throw ValidationError("recovery needs at least two names of gender " + std::string(to_string(g)));
  }
  const auto pairs = same_gender_pairs(records);
  if (pairs.empty()) throw ValidationError("recovery needs at least two names of one gender");

  // Scrub and intern once, in name order so term ids do not depend on the
  // caller's ordering.
  const NameScrubber scrubber(scrub_vocabulary(bank, options.scrub_surnames));
  const auto tokenizer = recovery_tokenizer();
  auto terms = std::make_shared<textml::TermIndex>();
  std::map<std::string, std::vector<textml::TermIds>> ids;
  for (const auto& [name, i] : index_of) {
    auto& docs = ids[name];
    for (const auto& ending : corpora[i].endings) {
      textml::TermIds doc;
      for (const auto& t : textml::tokenize(tokenizer, scrubber.scrub(ending))) doc.push_back(terms->intern(t));
      docs.push_back(std::move(doc));
    }
  }
  std::shared_ptr<const textml::TermIndex> frozen = terms;

  std::vector<PairScore> scores(pairs.size());
  parallel_for(pairs.size(), options.workers, [&](std::size_t i) {
    const auto& [a, b] = pairs[i];
    scores[i] = {a.given_name, b.given_name,
                 textml::cv_pair_score_ids(frozen, ids.at(a.given_name), ids.at(b.given_name), options.plan,
                                           options.svm)};
  });
  return aggregate_recovery(model_id, sampling, std::move(scores));
}

json to_json(const EndingCorpus& corpus) {
  return {{"name", corpus.given_name},
          {"model", corpus.model_id},
          {"template", corpus.template_text},
          {"sampling", wire::sampling_to_json(corpus.sampling)},
          {"seed", corpus.sampling.seed},
          {"endings", corpus.endings}};
}

EndingCorpus corpus_from_json(const json& j) {
  try {
    EndingCorpus c;
    c.given_name = j.at("name").get<std::string>();
    c.model_id = j.at("model").get<std::string>();
    c.template_text = j.value("template", std::string(kTemplate));
    c.sampling = wire::sampling_from_json(j.at("sampling"));
    if (j.contains("seed") && j.at("seed").get<std::uint64_t>() != c.sampling.seed) {
      throw ValidationError("corpus seed disagrees with its sampling spec");
    }
    c.endings = j.at("endings").get<std::vector<std::string>>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed corpus: ") + e.what());
  }
}

std::string corpus_file_name(const EndingCorpus& corpus) {
  const json material{{"model", corpus.model_id},
                      {"template", corpus.template_text},
                      {"sampling", wire::sampling_to_json(corpus.sampling)}};
  return corpus.given_name + "-" + sha256_hex(material.dump()).substr(0, 12) + ".json";
}

void save_corpus(const std::filesystem::path& dir, const EndingCorpus& corpus) {
  write_file_atomic(dir / corpus_file_name(corpus), to_json(corpus).dump(1) + "\n");
}

EndingCorpus load_corpus(const std::filesystem::path& path) {
  try {
    return corpus_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError("corpus '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

json to_json(const PairScore& p) { return {{"a", p.a}, {"b", p.b}, {"f1", p.f1}}; }

PairScore pair_score_from_json(const json& j) {
  try {
    return {j.at("a").get<std::string>(), j.at("b").get<std::string>(), j.at("f1").get<double>()};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed pair score: ") + e.what());
  }
}

}  // namespace nameprobe::recovery
