#pragma once

// Text classification core: tokenizer, TF-IDF, Pegasos linear SVM, F1 and
// stratified cross-validation. Everything here is deterministic given its
// inputs and seeds.

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nameprobe::textml {

// Tokens are maximal runs of word bytes (ASCII letters/digits or UTF-8
// multi-byte sequences) of length >= 2.
struct TokenizerConfig {
  bool lowercase = true;
  std::set<std::string> stop_list;
};

std::vector<std::string> tokenize(const TokenizerConfig& config, std::string_view text);

// Interns token strings to dense ids. Not thread-safe for writers.
class TermIndex {
 public:
  std::uint32_t intern(std::string_view term);
  // -1 when unknown.
  std::int64_t find(std::string_view term) const;
  const std::string& term(std::uint32_t id) const { return terms_[id]; }
  std::size_t size() const { return terms_.size(); }

 private:
  std::unordered_map<std::string, std::uint32_t> ids_;
  std::vector<std::string> terms_;
};

using TermIds = std::vector<std::uint32_t>;

class SparseVector {
 public:
  using Entry = std::pair<std::uint32_t, double>;

  explicit SparseVector(std::size_t dimension = 0) : dimension_(dimension) {}
  // Throws ValidationError unless indices are strictly increasing, below
  // `dimension`, and values are finite and non-zero.
  SparseVector(std::size_t dimension, std::vector<Entry> entries);

  std::size_t dimension() const { return dimension_; }
  const std::vector<Entry>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }
  double norm() const;
  double get(std::uint32_t index) const;

 private:
  std::size_t dimension_;
  std::vector<Entry> entries_;
};

// Smooth idf: ln((1 + N) / (1 + df)) + 1. Vectors are raw term counts times
// idf, L2-normalised.
class TfidfModel {
 public:
  // Fits on documents already mapped through `terms`. Vocabulary columns
  // follow ascending term id.
  static TfidfModel fit_ids(std::shared_ptr<const TermIndex> terms, std::span<const TermIds> docs,
                            TokenizerConfig config = {});

  SparseVector transform(std::string_view doc) const;
  SparseVector transform_ids(const TermIds& doc) const;

  std::size_t dimension() const { return columns_.size(); }
  std::size_t n_docs_fitted() const { return n_docs_; }
  const TokenizerConfig& config() const { return config_; }
  // token -> column.
  std::map<std::string, std::uint32_t> vocabulary() const;
  double idf(std::string_view token) const;
  std::uint32_t document_frequency(std::string_view token) const;
  const std::vector<double>& idf_by_column() const { return idf_; }

 private:
  std::shared_ptr<const TermIndex> terms_;
  TokenizerConfig config_;
  std::vector<std::uint32_t> columns_;  // column -> term id
  std::unordered_map<std::uint32_t, std::uint32_t> column_of_;
  std::vector<std::uint32_t> df_;
  std::vector<double> idf_;
  std::size_t n_docs_ = 0;
};

// Throws ValidationError for an empty corpus or one without any token.
// Columns are in lexicographic token order.
TfidfModel fit_tfidf(const TokenizerConfig& config, std::span<const std::string> corpus);
inline SparseVector transform(const TfidfModel& model, std::string_view doc) { return model.transform(doc); }

struct SvmConfig {
  double lambda = 1e-4;
  std::uint32_t epochs = 20;
  std::uint64_t seed = 0;
};

// Decision function w.x + b. The bias is trained as an extra constant-1
// feature, so it is regularised together with w.
struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;
  SvmConfig training_config;

  double decision(const SparseVector& x) const;
};

// Pegasos: step 1/(lambda t), projection onto the ball of radius
// 1/sqrt(lambda), one seeded shuffle per epoch. Labels must be -1/+1 and both
// classes present.
LinearModel train_linear_svm(std::span<const SparseVector> xs, std::span<const int> ys, const SvmConfig& config);

// sign(w.x + b), exact 0 resolves to +1. Throws on dimension mismatch.
int predict(const LinearModel& model, const SparseVector& x);

// lambda/2 (|w|^2 + b^2) + mean hinge loss.
double svm_objective(const LinearModel& model, std::span<const SparseVector> xs, std::span<const int> ys);
double svm_objective(std::span<const double> weights, double bias, double lambda, std::span<const SparseVector> xs,
                     std::span<const int> ys);

// 2PR/(P+R), 0 when P+R = 0.
double f1_binary(std::span<const int> predictions, std::span<const int> gold, int positive_class);
// Mean of the +1 and -1 F1 scores.
double macro_f1(std::span<const int> predictions, std::span<const int> gold);

struct CvPlan {
  std::uint32_t folds = 5;
  std::uint64_t seed = 0;
  bool stratified = true;
};

// fold_of[i] for each of n items of one class: seeded permutation, item at
// permuted position j goes to fold j % folds.
std::vector<std::uint32_t> fold_assignment(std::size_t n, const CvPlan& plan);

// Stratified k-fold: per fold fit TF-IDF on the training part only, train the
// SVM, score macro-F1 on the held-out part; returns the fold mean. Symmetric
// in (a, b).
double cv_pair_score(std::span<const std::string> corpus_a, std::span<const std::string> corpus_b,
                     const CvPlan& plan, const SvmConfig& svm, const TokenizerConfig& tokenizer = {});
double cv_pair_score_ids(std::shared_ptr<const TermIndex> terms, std::span<const TermIds> corpus_a,
                         std::span<const TermIds> corpus_b, const CvPlan& plan, const SvmConfig& svm);

}  // namespace nameprobe::textml
