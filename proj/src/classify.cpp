#include "tensorgrade/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "tensorgrade/parallel.hpp"
#include "tensorgrade/random.hpp"

namespace tensorgrade {

namespace {

constexpr double kTau = 1e-12;

void check_labels(std::span<const int> y) {
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1)
      pos = true;
    else if (v == -1)
      neg = true;
    else
      throw ClassifyError("svm: labels must be +1 or -1");
  }
  if (!pos || !neg) throw ClassifyError("svm: training data must contain both classes");
}

} // namespace

namespace {

// With w fixed the optimal biases are the minimizers of the hinge sum, an
// interval whose ends are breakpoints y_i - f_i. Its midpoint is returned so
// the bias is unique even when no support vector is free.
double canonical_bias(const Eigen::VectorXd& f, const Eigen::VectorXd& yd, double fallback) {
  const Eigen::Index n = f.size();
  auto hinge = [&](double b) {
    double h = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) h += std::max(0.0, 1.0 - yd[t] * (f[t] + b));
    return h;
  };
  std::vector<double> at(static_cast<std::size_t>(n));
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t < n; ++t) {
    at[static_cast<std::size_t>(t)] = hinge(yd[t] - f[t]);
    best = std::min(best, at[static_cast<std::size_t>(t)]);
  }
  const double tol = 1e-12 * (1.0 + best);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Eigen::Index t = 0; t < n; ++t)
    if (at[static_cast<std::size_t>(t)] <= best + tol) {
      lo = std::min(lo, yd[t] - f[t]);
      hi = std::max(hi, yd[t] - f[t]);
    }
  if (!(lo <= hi)) return fallback;
  // A unique minimizer keeps the dual estimate, which is the same point.
  if (fallback >= lo && fallback <= hi && hi - lo <= 1e-9 * (1.0 + std::abs(fallback))) return fallback;
  return 0.5 * (lo + hi);
}

} // namespace

SvmFit svm_train(const Eigen::MatrixXd& x, std::span<const int> y, double c, double eps, std::size_t max_iter) {
  const Eigen::Index n = x.rows();
  if (n == 0 || static_cast<std::size_t>(n) != y.size()) throw ClassifyError("svm: one label per example required");
  if (!(c > 0.0)) throw ClassifyError("svm: C must be positive");
  if (!x.allFinite()) throw ClassifyError("svm: non-finite features");
  check_labels(y);

  Eigen::VectorXd yd(n);
  for (Eigen::Index i = 0; i < n; ++i) yd[i] = y[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd k = x * x.transpose();
  const Eigen::MatrixXd q = yd.asDiagonal() * k * yd.asDiagonal();
  const Eigen::VectorXd qd = q.diagonal();

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad = Eigen::VectorXd::Constant(n, -1.0); // Q alpha - e
  auto upper = [&](Eigen::Index t) { return alpha[t] >= c; };
  auto lower = [&](Eigen::Index t) { return alpha[t] <= 0.0; };

  SvmFit fit;
  std::size_t iter = 0;
  for (; iter < max_iter; ++iter) {
    // Working-set selection: i maximises -y G over I_up, j minimises the
    // second-order objective decrease over I_low.
    double gmax = -std::numeric_limits<double>::infinity(), gmax2 = gmax;
    Eigen::Index i = -1, j = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (yd[t] > 0) {
        if (!upper(t) && -grad[t] >= gmax) {
          gmax = -grad[t];
          i = t;
        }
      } else if (!lower(t) && grad[t] >= gmax) {
        gmax = grad[t];
        i = t;
      }
    }
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n && i >= 0; ++t) {
      if (yd[t] > 0) {
        if (lower(t)) continue;
        const double diff = gmax + grad[t];
        gmax2 = std::max(gmax2, grad[t]);
        if (diff > 0) {
          double quad = qd[i] + qd[t] - 2.0 * yd[i] * q(i, t);
          if (quad <= 0) quad = kTau;
          const double obj = -(diff * diff) / quad;
          if (obj <= best) {
            best = obj;
            j = t;
          }
        }
      } else {
        if (upper(t)) continue;
        const double diff = gmax - grad[t];
        gmax2 = std::max(gmax2, -grad[t]);
        if (diff > 0) {
          double quad = qd[i] + qd[t] + 2.0 * yd[i] * q(i, t);
          if (quad <= 0) quad = kTau;
          const double obj = -(diff * diff) / quad;
          if (obj <= best) {
            best = obj;
            j = t;
          }
        }
      }
    }
    if (i < 0 || j < 0 || gmax + gmax2 < eps) {
      fit.converged = true;
      break;
    }

    const double ai = alpha[i], aj = alpha[j];
    if (yd[i] != yd[j]) {
      double quad = qd[i] + qd[j] + 2.0 * q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = diff;
        }
      } else if (alpha[i] < 0) {
        alpha[i] = 0;
        alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = c - diff;
        }
      } else if (alpha[j] > c) {
        alpha[j] = c;
        alpha[i] = c + diff;
      }
    } else {
      double quad = qd[i] + qd[j] - 2.0 * q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) {
          alpha[i] = c;
          alpha[j] = sum - c;
        }
        if (alpha[j] > c) {
          alpha[j] = c;
          alpha[i] = sum - c;
        }
      } else {
        if (alpha[j] < 0) {
          alpha[j] = 0;
          alpha[i] = sum;
        }
        if (alpha[i] < 0) {
          alpha[i] = 0;
          alpha[j] = sum;
        }
      }
    }
    const double di = alpha[i] - ai, dj = alpha[j] - aj;
    grad += q.col(i) * di + q.col(j) * dj;
  }
  fit.iterations = iter;

  // Bias from free support vectors, else the middle of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  std::size_t n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = yd[t] * grad[t];
    if (upper(t)) {
      if (yd[t] < 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (yd[t] > 0)
        ub = std::min(ub, yg);
      else
        lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  const double rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2.0;

  fit.alpha = alpha;
  fit.model.w = x.transpose() * (alpha.cwiseProduct(yd));
  fit.model.b = canonical_bias(x * fit.model.w, yd, -rho);
  const Eigen::VectorXd margins = (yd.array() * ((x * fit.model.w).array() + fit.model.b)).matrix();
  double hinge = 0.0;
  for (Eigen::Index t = 0; t < n; ++t) hinge += std::max(0.0, 1.0 - margins[t]);
  const double wsq = fit.model.w.squaredNorm();
  fit.primal = 0.5 * wsq + c * hinge;
  fit.dual = alpha.sum() - 0.5 * alpha.dot(q * alpha);
  return fit;
}

Prediction svm_predict(const LinearModel& model, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(model.w.size()))
    throw ClassifyError("svm_predict: feature dimension " + std::to_string(x.size()) + " does not match model " +
                        std::to_string(model.w.size()));
  double s = model.b;
  for (std::size_t k = 0; k < x.size(); ++k) s += model.w[static_cast<Eigen::Index>(k)] * x[k];
  return {s >= 0.0 ? 1 : -1, s};
}

std::vector<Prediction> svm_predict(const LinearModel& model, const Eigen::MatrixXd& x) {
  std::vector<Prediction> out;
  out.reserve(static_cast<std::size_t>(x.rows()));
  std::vector<double> row(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index k = 0; k < x.cols(); ++k) row[static_cast<std::size_t>(k)] = x(i, k);
    out.push_back(svm_predict(model, row));
  }
  return out;
}

Metrics metrics(const Confusion& c) {
  const std::size_t total = c.total();
  if (total == 0) throw ClassifyError("metrics: empty confusion matrix");
  Metrics m;
  m.acc = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
  if (c.tp + c.fn > 0) m.sen = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0) m.spe = 100.0 * static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return m;
}

FeatureTable::FeatureTable(std::vector<std::string> feature_names, std::vector<FeatureRow> rows)
    : names_(std::move(feature_names)), rows_(std::move(rows)) {
  if (names_.empty()) throw ClassifyError("feature table: no feature columns");
  std::set<std::string> ids;
  for (const auto& r : rows_) {
    if (!ids.insert(r.subject_id).second) throw ClassifyError("feature table: duplicate subject " + r.subject_id);
    if (r.features.size() != names_.size())
      throw ClassifyError("feature table: subject " + r.subject_id + " has the wrong number of features");
    for (double v : r.features)
      if (!std::isfinite(v)) throw ClassifyError("feature table: non-finite feature for subject " + r.subject_id);
    if (r.label != 1 && r.label != -1) throw ClassifyError("feature table: class of " + r.subject_id + " must be 1 or -1");
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ClassifyError(where + ": cannot parse '" + s + "' as a number");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

FeatureTable FeatureTable::read_csv(const std::filesystem::path& path, const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw ClassifyError(path.string() + ": cannot open feature table");
  std::string line;
  if (!std::getline(in, line)) throw ClassifyError(path.string() + ": empty feature table");
  const auto header = split_csv(line);
  if (header.size() < 3 || header[0] != "subject_id" || header[1] != "class")
    throw ClassifyError(path.string() + ": header must start with subject_id,class");
  std::vector<std::string> names(header.begin() + 2, header.end());
  std::vector<FeatureRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) throw ClassifyError(where + ": expected " + std::to_string(header.size()) + " cells");
    FeatureRow r;
    r.subject_id = cells[0];
    const double cls = parse_double(cells[1], where);
    if (cls != 1.0 && cls != -1.0) throw ClassifyError(where + ": class must be 1 or -1");
    r.label = static_cast<int>(cls);
    for (std::size_t k = 2; k < cells.size(); ++k) r.features.push_back(parse_double(cells[k], where));
    rows.push_back(std::move(r));
  }
  FeatureTable t(std::move(names), std::move(rows));
  return columns.empty() ? t : t.select(columns);
}

void FeatureTable::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ClassifyError(path.string() + ": cannot open for writing");
  out << "subject_id,class";
  for (const auto& n : names_) out << ',' << n;
  out << '\n';
  for (const auto& r : rows_) {
    out << r.subject_id << ',' << r.label;
    for (double v : r.features) out << ',' << fmt(v);
    out << '\n';
  }
  if (!out) throw ClassifyError(path.string() + ": write failed");
}

FeatureTable FeatureTable::select(const std::vector<std::string>& columns) const {
  std::vector<std::size_t> idx;
  for (const auto& c : columns) {
    auto it = std::find(names_.begin(), names_.end(), c);
    if (it == names_.end()) throw ClassifyError("feature table: no column named '" + c + "'");
    idx.push_back(static_cast<std::size_t>(it - names_.begin()));
  }
  std::vector<FeatureRow> rows;
  rows.reserve(rows_.size());
  for (const auto& r : rows_) {
    FeatureRow s{r.subject_id, {}, r.label};
    for (auto k : idx) s.features.push_back(r.features[k]);
    rows.push_back(std::move(s));
  }
  return FeatureTable(columns, std::move(rows));
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.sem = s.sd / std::sqrt(static_cast<double>(s.n));
  }
  return s;
}

namespace {

std::vector<std::size_t> class_indices(std::span<const int> labels, int cls) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == cls) out.push_back(i);
  return out;
}

std::size_t test_count(std::size_t n_class, double fraction) {
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_class)));
  return std::clamp<std::size_t>(k, 1, n_class - 1);
}

// Trains on `train`, scores `test`; features z-scored with training statistics.
Confusion evaluate_split(const FeatureTable& table, const std::vector<std::size_t>& train,
                         const std::vector<std::size_t>& test, double c) {
  const std::size_t dim = table.dimension();
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  for (auto i : train)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += table.rows()[i].features[k];
  for (auto& m : mean) m /= static_cast<double>(train.size());
  for (auto i : train)
    for (std::size_t k = 0; k < dim; ++k) {
      const double d = table.rows()[i].features[k] - mean[k];
      sd[k] += d * d;
    }
  for (auto& s : sd) {
    s = std::sqrt(s / static_cast<double>(train.size()));
    if (!(s > 0.0)) s = 1.0;
  }
  auto standardized = [&](const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t k = 0; k < dim; ++k)
        x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
            (table.rows()[idx[r]].features[k] - mean[k]) / sd[k];
    return x;
  };
  std::vector<int> y;
  for (auto i : train) y.push_back(table.rows()[i].label);
  const SvmFit fit = svm_train(standardized(train), y, c);
  const auto pred = svm_predict(fit.model, standardized(test));
  Confusion conf;
  for (std::size_t r = 0; r < test.size(); ++r) {
    const int truth = table.rows()[test[r]].label;
    if (truth == 1)
      (pred[r].label == 1 ? conf.tp : conf.fn)++;
    else
      (pred[r].label == -1 ? conf.tn : conf.fp)++;
  }
  return conf;
}

} // namespace

std::vector<std::size_t> stratified_test_split(std::span<const int> labels, double test_fraction, std::uint64_t seed,
                                               std::size_t iteration) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ClassifyError("cv: test fraction must be in (0, 1)");
  Rng rng(seed, iteration);
  std::vector<std::size_t> test;
  for (int cls : {1, -1}) {
    auto idx = class_indices(labels, cls);
    if (idx.size() < 2) throw ClassifyError("cv: class " + std::to_string(cls) + " too small to stratify");
    rng.shuffle(idx.begin(), idx.end());
    const std::size_t k = test_count(idx.size(), test_fraction);
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(test.begin(), test.end());
  return test;
}

EvaluationReport stratified_cv(const FeatureTable& table, const CvOptions& opts) {
  if (opts.n_iter == 0) throw ClassifyError("cv: need at least one iteration");
  std::vector<int> labels;
  for (const auto& r : table.rows()) labels.push_back(r.label);
  const auto pos = class_indices(labels, 1), neg = class_indices(labels, -1);
  const std::size_t min_class = opts.folds >= 2 ? opts.folds : 2;
  if (pos.size() < min_class || neg.size() < min_class) throw ClassifyError("cv: class too small to stratify");

  std::vector<Confusion> per_iter(opts.n_iter);
  parallel_for(opts.n_iter, opts.threads, [&](std::size_t it) {
    if (opts.folds < 2) {
      const auto test = stratified_test_split(labels, opts.test_fraction, opts.seed, it);
      std::vector<std::size_t> train;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (!std::binary_search(test.begin(), test.end(), i)) train.push_back(i);
      per_iter[it] = evaluate_split(table, train, test, opts.c);
      return;
    }
    Rng rng(opts.seed, it);
    std::vector<std::size_t> fold(labels.size());
    for (const auto* cls : {&pos, &neg}) {
      auto idx = *cls;
      rng.shuffle(idx.begin(), idx.end());
      for (std::size_t r = 0; r < idx.size(); ++r) fold[idx[r]] = r % opts.folds;
    }
    Confusion total;
    for (std::size_t f = 0; f < opts.folds; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t i = 0; i < labels.size(); ++i) (fold[i] == f ? test : train).push_back(i);
      total += evaluate_split(table, train, test, opts.c);
    }
    per_iter[it] = total;
  });

  EvaluationReport rep;
  rep.iterations = per_iter;
  std::vector<double> acc, sen, spe;
  for (const auto& c : per_iter) {
    const Metrics m = metrics(c);
    rep.iteration_metrics.push_back(m);
    acc.push_back(m.acc);
    if (m.sen) sen.push_back(*m.sen);
    if (m.spe) spe.push_back(*m.spe);
  }
  rep.acc = summarize(acc);
  rep.sen = summarize(sen);
  rep.spe = summarize(spe);
  rep.config = {{"n_iter", opts.n_iter},     {"test_fraction", opts.test_fraction},
                {"seed", opts.seed},         {"C", opts.c},
                {"folds", opts.folds},       {"features", table.feature_names()},
                {"subjects", table.size()},  {"positives", pos.size()},
                {"negatives", neg.size()}};
  return rep;
}

namespace {

nlohmann::ordered_json summary_json(const Summary& s) {
  return {{"mean", s.mean}, {"sem", s.sem}, {"sd", s.sd}, {"n", s.n}};
}

} // namespace

nlohmann::ordered_json EvaluationReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["ACC"] = summary_json(acc);
  j["SEN"] = summary_json(sen);
  j["SPE"] = summary_json(spe);
  auto& its = j["iterations"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    const auto& c = iterations[i];
    const auto& m = iteration_metrics[i];
    nlohmann::ordered_json row = {{"iter", i}, {"TP", c.tp}, {"TN", c.tn}, {"FP", c.fp}, {"FN", c.fn}, {"ACC", m.acc}};
    row["SEN"] = m.sen ? nlohmann::ordered_json(*m.sen) : nlohmann::ordered_json(nullptr);
    row["SPE"] = m.spe ? nlohmann::ordered_json(*m.spe) : nlohmann::ordered_json(nullptr);
    its.push_back(std::move(row));
  }
  return j;
}

void EvaluationReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ClassifyError(path.string() + ": cannot open for writing");
  out << to_json().dump(2) << '\n';
}

void EvaluationReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ClassifyError(path.string() + ": cannot open for writing");
  out << "iter,TP,TN,FP,FN,ACC,SEN,SPE\n";
  for (std::size_t i = 0; i < iterations.size(); ++i) {
    const auto& c = iterations[i];
    const auto& m = iteration_metrics[i];
    out << i << ',' << c.tp << ',' << c.tn << ',' << c.fp << ',' << c.fn << ',' << fmt(m.acc) << ','
        << (m.sen ? fmt(*m.sen) : "") << ',' << (m.spe ? fmt(*m.spe) : "") << '\n';
  }
}

} // namespace tensorgrade
