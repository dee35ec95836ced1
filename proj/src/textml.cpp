#include "nameprobe/textml.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/rng.hpp"
#include "nameprobe/text_util.hpp"

namespace nameprobe::textml {

std::vector<std::string> tokenize(const TokenizerConfig& config, std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) ++i;
    if (i - start < 2) continue;
    std::string token(text.substr(start, i - start));
    if (config.lowercase) token = to_lower_ascii(token);
    if (config.stop_list.count(token)) continue;
    tokens.push_back(std::move(token));
  }
  return tokens;
}

std::uint32_t TermIndex::intern(std::string_view term) {
  auto [it, inserted] = ids_.try_emplace(std::string(term), static_cast<std::uint32_t>(terms_.size()));
  if (inserted) terms_.push_back(it->first);
  return it->second;
}

std::int64_t TermIndex::find(std::string_view term) const {
  const auto it = ids_.find(std::string(term));
  return it == ids_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

SparseVector::SparseVector(std::size_t dimension, std::vector<Entry> entries)
    : dimension_(dimension), entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& [index, value] = entries_[i];
    if (index >= dimension_) throw ValidationError("sparse index out of range");
    if (i > 0 && entries_[i - 1].first >= index) throw ValidationError("sparse indices not strictly increasing");
    if (!std::isfinite(value) || value == 0.0) throw ValidationError("sparse value must be finite and non-zero");
  }
}

double SparseVector::norm() const {
  double sum = 0.0;
  for (const auto& e : entries_) sum += e.second * e.second;
  return std::sqrt(sum);
}

double SparseVector::get(std::uint32_t index) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), index,
                                   [](const Entry& e, std::uint32_t i) { return e.first < i; });
  return it != entries_.end() && it->first == index ? it->second : 0.0;
}

// ---------------------------------------------------------------------------
// TF-IDF

TfidfModel TfidfModel::fit_ids(std::shared_ptr<const TermIndex> terms, std::span<const TermIds> docs,
                               TokenizerConfig config) {
  if (docs.empty()) throw ValidationError("cannot fit TF-IDF on an empty corpus");
  TfidfModel m;
  m.terms_ = std::move(terms);
  m.config_ = std::move(config);
  m.n_docs_ = docs.size();

  std::unordered_map<std::uint32_t, std::uint32_t> df;
  TermIds unique;
  for (const auto& doc : docs) {
    unique = doc;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    for (auto id : unique) ++df[id];
  }
  if (df.empty()) throw ValidationError("cannot fit TF-IDF: corpus contains no tokens");

  m.columns_.reserve(df.size());
  for (const auto& [id, count] : df) m.columns_.push_back(id);
  std::sort(m.columns_.begin(), m.columns_.end());
  m.df_.resize(m.columns_.size());
  m.idf_.resize(m.columns_.size());
  const double n = static_cast<double>(m.n_docs_);
  for (std::uint32_t col = 0; col < m.columns_.size(); ++col) {
    const auto id = m.columns_[col];
    m.column_of_.emplace(id, col);
    m.df_[col] = df[id];
    m.idf_[col] = std::log((1.0 + n) / (1.0 + static_cast<double>(m.df_[col]))) + 1.0;
  }
  return m;
}

SparseVector TfidfModel::transform_ids(const TermIds& doc) const {
  std::vector<std::uint32_t> cols;
  cols.reserve(doc.size());
  for (auto id : doc) {
    const auto it = column_of_.find(id);
    if (it != column_of_.end()) cols.push_back(it->second);
  }
  if (cols.empty()) return SparseVector(dimension());
  std::sort(cols.begin(), cols.end());
  std::vector<SparseVector::Entry> entries;
  for (std::size_t i = 0; i < cols.size();) {
    std::size_t j = i;
    while (j < cols.size() && cols[j] == cols[i]) ++j;
    entries.emplace_back(cols[i], static_cast<double>(j - i) * idf_[cols[i]]);
    i = j;
  }
  double norm = 0.0;
  for (const auto& e : entries) norm += e.second * e.second;
  norm = std::sqrt(norm);
  for (auto& e : entries) e.second /= norm;
  return SparseVector(dimension(), std::move(entries));
}

SparseVector TfidfModel::transform(std::string_view doc) const {
  TermIds ids;
  for (const auto& token : tokenize(config_, doc)) {
    const auto id = terms_->find(token);
    if (id >= 0) ids.push_back(static_cast<std::uint32_t>(id));
  }
  return transform_ids(ids);
}

std::map<std::string, std::uint32_t> TfidfModel::vocabulary() const {
  std::map<std::string, std::uint32_t> out;
  for (std::uint32_t col = 0; col < columns_.size(); ++col) out.emplace(terms_->term(columns_[col]), col);
  return out;
}

double TfidfModel::idf(std::string_view token) const {
  const auto id = terms_->find(token);
  if (id < 0) return 0.0;
  const auto it = column_of_.find(static_cast<std::uint32_t>(id));
  return it == column_of_.end() ? 0.0 : idf_[it->second];
}

std::uint32_t TfidfModel::document_frequency(std::string_view token) const {
  const auto id = terms_->find(token);
  if (id < 0) return 0;
  const auto it = column_of_.find(static_cast<std::uint32_t>(id));
  return it == column_of_.end() ? 0 : df_[it->second];
}

TfidfModel fit_tfidf(const TokenizerConfig& config, std::span<const std::string> corpus) {
  if (corpus.empty()) throw ValidationError("cannot fit TF-IDF on an empty corpus");
  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(corpus.size());
  std::set<std::string> all;
  for (const auto& doc : corpus) {
    tokenized.push_back(tokenize(config, doc));
    all.insert(tokenized.back().begin(), tokenized.back().end());
  }
  // Interning in sorted order makes columns lexicographic.
  auto terms = std::make_shared<TermIndex>();
  for (const auto& t : all) terms->intern(t);
  std::vector<TermIds> docs;
  docs.reserve(tokenized.size());
  for (const auto& doc : tokenized) {
    TermIds ids;
    ids.reserve(doc.size());
    for (const auto& t : doc) ids.push_back(static_cast<std::uint32_t>(terms->find(t)));
    docs.push_back(std::move(ids));
  }
  return TfidfModel::fit_ids(std::move(terms), docs, config);
}

// ---------------------------------------------------------------------------
// Linear SVM

double LinearModel::decision(const SparseVector& x) const {
  if (x.dimension() != weights.size()) {
    throw ValidationError("dimension mismatch: model has " + std::to_string(weights.size()) + ", vector has " +
                          std::to_string(x.dimension()));
  }
  double s = bias;
  for (const auto& [i, v] : x.entries()) s += weights[i] * v;
  return s;
}

int predict(const LinearModel& model, const SparseVector& x) { return model.decision(x) >= 0.0 ? +1 : -1; }

LinearModel train_linear_svm(std::span<const SparseVector> xs, std::span<const int> ys, const SvmConfig& config) {
  if (xs.size() != ys.size()) throw ValidationError("feature/label count mismatch");
  if (xs.empty()) throw ValidationError("cannot train on zero examples");
  if (!(config.lambda > 0.0) || !std::isfinite(config.lambda)) throw ValidationError("lambda must be > 0");
  if (config.epochs < 1) throw ValidationError("epochs must be >= 1");
  const std::size_t dim = xs.front().dimension();
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].dimension() != dim) throw ValidationError("training vectors differ in dimension");
    if (ys[i] == 1) {
      has_pos = true;
    } else if (ys[i] == -1) {
      has_neg = true;
    } else {
      throw ValidationError("labels must be -1 or +1");
    }
  }
  if (!has_pos || !has_neg) throw ValidationError("training data must contain both classes");

  // w = scale * v; v[dim] holds the bias coordinate.
  std::vector<double> v(dim + 1, 0.0);
  double scale = 1.0;
  double v_norm_sq = 0.0;
  const double radius = 1.0 / std::sqrt(config.lambda);
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  std::uint64_t t = 0;

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (const std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (config.lambda * static_cast<double>(t));
      const auto& x = xs[i];
      const double y = ys[i];
      double vx = v[dim];
      for (const auto& [j, val] : x.entries()) vx += v[j] * val;
      const double margin = y * scale * vx;

      // w <- (1 - eta*lambda) w
      const double shrink = 1.0 - eta * config.lambda;
      if (shrink <= 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        scale = 1.0;
        v_norm_sq = 0.0;
      } else {
        scale *= shrink;
      }

      if (margin < 1.0) {
        // w += eta*y*x  <=>  v += (eta*y/scale) x
        const double step = eta * y / scale;
        const double vx_now = shrink <= 0.0 ? 0.0 : vx;
        double x_norm_sq = 1.0;
        for (const auto& [j, val] : x.entries()) x_norm_sq += val * val;
        for (const auto& [j, val] : x.entries()) v[j] += step * val;
        v[dim] += step;
        v_norm_sq += 2.0 * step * vx_now + step * step * x_norm_sq;
      }

      const double w_norm = scale * std::sqrt(std::max(0.0, v_norm_sq));
      if (w_norm > radius) scale *= radius / w_norm;

      if (scale < 1e-9) {
        for (auto& e : v) e *= scale;
        v_norm_sq *= scale * scale;
        scale = 1.0;
      }
    }
    // Refresh the running norm to bound drift.
    v_norm_sq = 0.0;
    for (const double e : v) v_norm_sq += e * e;
  }

  LinearModel model;
  model.training_config = config;
  model.weights.resize(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    model.weights[j] = scale * v[j];
    if (!std::isfinite(model.weights[j])) throw Error("SVM training diverged");
  }
  model.bias = scale * v[dim];
  return model;
}

double svm_objective(std::span<const double> weights, double bias, double lambda, std::span<const SparseVector> xs,
                     std::span<const int> ys) {
  double reg = bias * bias;
  for (const double w : weights) reg += w * w;
  double hinge = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double s = bias;
    for (const auto& [j, val] : xs[i].entries()) s += weights[j] * val;
    hinge += std::max(0.0, 1.0 - ys[i] * s);
  }
  return 0.5 * lambda * reg + (xs.empty() ? 0.0 : hinge / static_cast<double>(xs.size()));
}

double svm_objective(const LinearModel& model, std::span<const SparseVector> xs, std::span<const int> ys) {
  return svm_objective(model.weights, model.bias, model.training_config.lambda, xs, ys);
}

// ---------------------------------------------------------------------------
// Metrics and cross-validation

double f1_binary(std::span<const int> predictions, std::span<const int> gold, int positive_class) {
  if (predictions.size() != gold.size()) throw ValidationError("prediction/gold length mismatch");
  if (predictions.empty()) throw ValidationError("f1 of empty input");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool p = predictions[i] == positive_class;
    const bool g = gold[i] == positive_class;
    if (p && g) ++tp;
    if (p && !g) ++fp;
    if (!p && g) ++fn;
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double macro_f1(std::span<const int> predictions, std::span<const int> gold) {
  return 0.5 * (f1_binary(predictions, gold, +1) + f1_binary(predictions, gold, -1));
}

std::vector<std::uint32_t> fold_assignment(std::size_t n, const CvPlan& plan) {
  const auto perm = seeded_permutation(n, plan.seed);
  std::vector<std::uint32_t> fold_of(n);
  for (std::size_t j = 0; j < n; ++j) fold_of[perm[j]] = static_cast<std::uint32_t>(j % plan.folds);
  return fold_of;
}

double cv_pair_score_ids(std::shared_ptr<const TermIndex> terms, std::span<const TermIds> corpus_a,
                         std::span<const TermIds> corpus_b, const CvPlan& plan, const SvmConfig& svm) {
  if (plan.folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  if (corpus_a.size() < plan.folds || corpus_b.size() < plan.folds) {
    throw ValidationError("corpus too small for " + std::to_string(plan.folds) + " folds");
  }
  // Macro-F1 does not depend on which class is positive, so evaluating the
  // pair in a canonical order makes the score exactly symmetric.
  if (std::lexicographical_compare(corpus_b.begin(), corpus_b.end(), corpus_a.begin(), corpus_a.end())) {
    std::swap(corpus_a, corpus_b);
  }
  const auto folds_a = fold_assignment(corpus_a.size(), plan);
  const auto folds_b = fold_assignment(corpus_b.size(), plan);

  double total = 0.0;
  for (std::uint32_t fold = 0; fold < plan.folds; ++fold) {
    std::vector<TermIds> train_docs;
    std::vector<int> train_y;
    std::vector<const TermIds*> test_docs;
    std::vector<int> test_y;
    auto split = [&](std::span<const TermIds> corpus, const std::vector<std::uint32_t>& fold_of, int label) {
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (fold_of[i] == fold) {
          test_docs.push_back(&corpus[i]);
          test_y.push_back(label);
        } else {
          train_docs.push_back(corpus[i]);
          train_y.push_back(label);
        }
      }
    };
    split(corpus_a, folds_a, +1);
    split(corpus_b, folds_b, -1);

    bool any_token = false;
    for (const auto& d : train_docs) any_token = any_token || !d.empty();
    std::vector<int> predictions;
    if (!any_token) {
      // Nothing to learn from: every test document maps to the zero vector.
      predictions.assign(test_y.size(), +1);
    } else {
      const auto tfidf = TfidfModel::fit_ids(terms, train_docs);
      std::vector<SparseVector> xs;
      xs.reserve(train_docs.size());
      for (const auto& d : train_docs) xs.push_back(tfidf.transform_ids(d));
      SvmConfig fold_svm = svm;
      fold_svm.seed = derive_seed(svm.seed, fold);
      const auto model = train_linear_svm(xs, train_y, fold_svm);
      for (const auto* d : test_docs) predictions.push_back(predict(model, tfidf.transform_ids(*d)));
    }
    total += macro_f1(predictions, test_y);
  }
  return total / static_cast<double>(plan.folds);
}

double cv_pair_score(std::span<const std::string> corpus_a, std::span<const std::string> corpus_b,
                     const CvPlan& plan, const SvmConfig& svm, const TokenizerConfig& tokenizer) {
  if (std::lexicographical_compare(corpus_b.begin(), corpus_b.end(), corpus_a.begin(), corpus_a.end())) {
    std::swap(corpus_a, corpus_b);
  }
  auto terms = std::make_shared<TermIndex>();
  auto to_ids = [&](std::span<const std::string> corpus) {
    std::vector<TermIds> out;
    out.reserve(corpus.size());
    for (const auto& doc : corpus) {
      TermIds ids;
      for (const auto& t : tokenize(tokenizer, doc)) ids.push_back(terms->intern(t));
      out.push_back(std::move(ids));
    }
    return out;
  };
  const auto a = to_ids(corpus_a);
  const auto b = to_ids(corpus_b);
  return cv_pair_score_ids(terms, a, b, plan, svm);
}

}  // namespace nameprobe::textml
