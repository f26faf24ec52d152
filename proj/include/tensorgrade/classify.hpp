#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace tensorgrade {

inline constexpr double kDefaultC = 1.0;
inline constexpr std::size_t kDefaultIterations = 100;
inline constexpr double kDefaultTestFraction = 0.2;

class ClassifyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct LinearModel {
  Eigen::VectorXd w;
  double b = 0.0;
};

struct SvmFit {
  LinearModel model;
  Eigen::VectorXd alpha; ///< dual variables, 0 <= alpha_i <= C
  double primal = 0.0;
  double dual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  double duality_gap() const { return primal - dual; }
};

/// Soft-margin linear SVM
///   min 1/2 ||w||^2 + C sum_i max(0, 1 - y_i (w.x_i + b))
/// solved in the dual by two-coordinate ascent (maximal-violating pair with
/// second-order selection), run until the KKT violation is below `eps`.
/// Rows of `x` are examples; labels must be +-1 with both classes present.
/// When several biases are optimal the midpoint of that interval is used.
SvmFit svm_train(const Eigen::MatrixXd& x, std::span<const int> y, double c = kDefaultC, double eps = 1e-10,
                 std::size_t max_iter = 1000000);

struct Prediction {
  int label = 1;
  double score = 0.0;
};

/// sign(w.x + b); a score of exactly 0 is labeled +1.
Prediction svm_predict(const LinearModel& model, std::span<const double> x);
std::vector<Prediction> svm_predict(const LinearModel& model, const Eigen::MatrixXd& x);

/// Positive class is +1 (pre-manifest), negative -1 (control).
struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
  Confusion& operator+=(const Confusion& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

/// Accuracy, sensitivity and specificity in percent; a rate without any
/// example in its denominator is absent.
struct Metrics {
  double acc = 0.0;
  std::optional<double> sen;
  std::optional<double> spe;
};

Metrics metrics(const Confusion& c);

struct FeatureRow {
  std::string subject_id;
  std::vector<double> features;
  int label = 1; ///< +1 positive, -1 negative
};

class FeatureTable {
public:
  FeatureTable(std::vector<std::string> feature_names, std::vector<FeatureRow> rows);

  /// CSV with header `subject_id,class,<feature>...`; `class` is 1 or -1.
  /// When `columns` is non-empty only those features are kept, in that order.
  static FeatureTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& columns = {});
  void write_csv(const std::filesystem::path& path) const;

  FeatureTable select(const std::vector<std::string>& columns) const;

  const std::vector<std::string>& feature_names() const { return names_; }
  const std::vector<FeatureRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t dimension() const { return names_.size(); }

private:
  std::vector<std::string> names_;
  std::vector<FeatureRow> rows_;
};

struct CvOptions {
  std::size_t n_iter = kDefaultIterations;
  double test_fraction = kDefaultTestFraction;
  std::uint64_t seed = 0;
  double c = kDefaultC;
  std::size_t folds = 0; ///< 0: repeated random splits; >= 2: repeated stratified k-fold
  unsigned threads = 1;
};

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double sem = 0.0;
  std::size_t n = 0;
};

struct EvaluationReport {
  std::vector<Confusion> iterations;
  std::vector<Metrics> iteration_metrics;
  Summary acc, sen, spe;
  nlohmann::ordered_json config;

  nlohmann::ordered_json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  /// One row per iteration: iter,TP,TN,FP,FN,ACC,SEN,SPE.
  void write_csv(const std::filesystem::path& path) const;
};

Summary summarize(std::span<const double> values);

/// Repeated class-stratified evaluation. Each iteration draws its split from
/// a generator seeded by (seed, iteration), z-scores features with training
/// statistics, trains a linear SVM and scores the held-out subjects.
EvaluationReport stratified_cv(const FeatureTable& table, const CvOptions& opts);

/// Stratified split of `labels` for one iteration: indices of the test set.
std::vector<std::size_t> stratified_test_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                                               std::size_t iteration);

} // namespace tensorgrade
