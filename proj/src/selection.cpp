#include "tensorgrade/selection.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace tensorgrade {

namespace {

double soft_threshold(double c, double lambda) {
  if (c > lambda) return c - lambda;
  if (c < -lambda) return c + lambda;
  return 0.0;
}

constexpr double kLiteralDenominatorMin = 1e-12;
constexpr double kKktSafety = 0.1;
constexpr std::size_t kPolishEvery = 16;

// Minimizer of F on the current support with the current signs held fixed,
// (G_A^T G_A + 2 rho I) b_A = G_A^T y - lambda s_A, followed from `beta` only
// as far as every sign holds: the first coordinate to reach zero is dropped.
// F is a convex quadratic on that segment, so the result never increases F.
Eigen::VectorXd support_step(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                             double rho, double lambda, bool& full) {
  full = false;
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) active.push_back(j);
  if (active.empty()) return beta;
  const auto na = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd ga(g.rows(), na);
  Eigen::VectorXd sign(na);
  for (Eigen::Index k = 0; k < na; ++k) {
    ga.col(k) = g.col(active[static_cast<std::size_t>(k)]);
    sign[k] = beta[active[static_cast<std::size_t>(k)]] > 0.0 ? 1.0 : -1.0;
  }
  const Eigen::VectorXd rhs = ga.transpose() * y - lambda * sign;
  Eigen::VectorXd ba;
  if (na <= g.rows() || rho == 0.0) {
    Eigen::MatrixXd m = ga.transpose() * ga;
    m.diagonal().array() += 2.0 * rho;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return beta;
    ba = ldlt.solve(rhs);
  } else {
    // Wider than tall: (A^T A + cI)^-1 r = (r - A^T (A A^T + cI)^-1 A r) / c.
    Eigen::MatrixXd m = ga * ga.transpose();
    m.diagonal().array() += 2.0 * rho;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return beta;
    ba = (rhs - ga.transpose() * ldlt.solve(ga * rhs)) / (2.0 * rho);
  }
  if (!ba.allFinite()) return beta;
  double t = 1.0;
  Eigen::Index first = -1;
  for (Eigen::Index k = 0; k < na; ++k) {
    if (ba[k] * sign[k] > 0.0) continue;
    const double from = beta[active[static_cast<std::size_t>(k)]];
    const double tk = from / (from - ba[k]);
    if (tk < t || first < 0) {
      t = tk;
      first = k;
    }
  }
  full = first < 0;
  Eigen::VectorXd out = beta;
  for (Eigen::Index k = 0; k < na; ++k) {
    const auto j = active[static_cast<std::size_t>(k)];
    out[j] = k == first ? 0.0 : beta[j] + t * (ba[k] - beta[j]);
    if (out[j] * sign[k] < 0.0) out[j] = 0.0;
  }
  return out;
}

} // namespace

DesignMatrix design_matrix(std::span<const GradingMap> maps, std::span<const double> labels) {
  if (maps.empty()) throw SelectionError("design_matrix: no grading maps");
  if (maps.size() != labels.size()) throw SelectionError("design_matrix: one label per map required");
  DesignMatrix d;
  d.mask = maps.front().mask();
  d.spacing = maps.front().spacing();
  d.voxels = d.mask.voxels();
  if (d.voxels.empty()) throw SelectionError("design_matrix: empty mask");
  d.g.resize(static_cast<Eigen::Index>(maps.size()), static_cast<Eigen::Index>(d.voxels.size()));
  d.y.resize(static_cast<Eigen::Index>(maps.size()));
  for (std::size_t r = 0; r < maps.size(); ++r) {
    if (!(maps[r].mask() == d.mask)) throw SelectionError("design_matrix: grading maps use different masks");
    if (labels[r] != 1.0 && labels[r] != -1.0) throw SelectionError("design_matrix: labels must be +1 or -1");
    d.y[static_cast<Eigen::Index>(r)] = labels[r];
    for (std::size_t c = 0; c < d.voxels.size(); ++c)
      d.g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = maps[r].at(d.voxels[c]);
  }
  return d;
}

double elastic_net_objective(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                             double rho, double lambda) {
  return 0.5 * (g * beta - y).squaredNorm() + rho * beta.squaredNorm() + lambda * beta.lpNorm<1>();
}

Eigen::VectorXd elastic_net_solve(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const ElasticNetOptions& opts,
                                  bool* converged, std::size_t* sweeps, std::vector<double>* objective) {
  if (g.rows() == 0 || g.cols() == 0) throw SelectionError("elastic_net: empty design matrix");
  if (g.rows() != y.size()) throw SelectionError("elastic_net: row count does not match labels");
  if (!(opts.rho >= 0.0) || !(opts.lambda >= 0.0)) throw SelectionError("elastic_net: rho and lambda must be >= 0");
  if (!g.allFinite() || !y.allFinite()) throw SelectionError("elastic_net: non-finite input");
  const Eigen::Index p = g.cols();
  const Eigen::VectorXd col_sq = g.colwise().squaredNorm();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  // Zero is optimal once lambda covers every correlation with Y.
  const Eigen::VectorXd corr = g.transpose() * y;
  const double bound = opts.nonneg ? std::max(corr.maxCoeff(), 0.0) : corr.lpNorm<Eigen::Infinity>();
  if (opts.lambda >= bound) {
    if (converged) *converged = true;
    if (sweeps) *sweeps = 0;
    return beta;
  }
  const double kkt_tol = kKktSafety * 1e-6 * (1.0 + y.norm());
  Eigen::VectorXd residual = y; // y - G beta
  bool done = false;
  std::size_t sweep = 0;
  while (sweep < opts.max_iter && !done) {
    ++sweep;
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double denom = col_sq[j] + 2.0 * opts.rho;
      if (denom == 0.0) continue;
      const double old = beta[j];
      const double c = g.col(j).dot(residual) + col_sq[j] * old;
      const double next = opts.nonneg ? std::max(c - opts.lambda, 0.0) / denom : soft_threshold(c, opts.lambda) / denom;
      if (next == old) continue;
      residual.noalias() -= (next - old) * g.col(j);
      beta[j] = next;
      max_change = std::max(max_change, std::abs(next - old));
    }
    if (objective) objective->push_back(elastic_net_objective(g, y, beta, opts.rho, opts.lambda));
    // Refresh the running residual so rounding does not accumulate.
    if (sweep % 64 == 0) residual = y - g * beta;
    if (max_change < opts.tol)
      done = check_kkt(g, y, beta, opts.rho, opts.lambda, opts.nonneg).max_violation <= kkt_tol;
    if (!done && sweep % kPolishEvery == 0) {
      // Drop coordinates until the support solve keeps every sign.
      double f_beta = elastic_net_objective(g, y, beta, opts.rho, opts.lambda);
      for (bool full = false; !full;) {
        const Eigen::VectorXd cand = support_step(g, y, beta, opts.rho, opts.lambda, full);
        const double f = elastic_net_objective(g, y, cand, opts.rho, opts.lambda);
        if (!(f <= f_beta)) break;
        beta = cand;
        f_beta = f;
        if (objective) objective->push_back(f);
      }
      residual = y - g * beta;
      done = check_kkt(g, y, beta, opts.rho, opts.lambda, opts.nonneg).max_violation <= kkt_tol;
    }
  }
  if (converged) *converged = done;
  if (sweeps) *sweeps = sweep;
  return beta;
}

CoefficientMap elastic_net_fit(const DesignMatrix& design, const ElasticNetOptions& opts) {
  CoefficientMap out;
  out.beta = elastic_net_solve(design.g, design.y, opts, &out.converged, &out.sweeps,
                               opts.record_objective ? &out.objective : nullptr);
  for (Eigen::Index j = 0; j < out.beta.size(); ++j)
    if (out.beta[j] != 0.0) out.nonzero.push_back(static_cast<std::size_t>(j));
  out.voxels = design.voxels;
  out.mask = design.mask;
  out.spacing = design.spacing;
  out.rho = opts.rho;
  out.lambda = opts.lambda;
  out.nonneg = opts.nonneg;
  return out;
}

KktReport check_kkt(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const Eigen::VectorXd& beta, double rho,
                    double lambda, bool nonneg) {
  KktReport rep;
  rep.tol = 1e-6 * (1.0 + y.norm());
  const Eigen::VectorXd grad = g.transpose() * (g * beta - y);
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    double v;
    if (beta[j] != 0.0) {
      v = std::abs(grad[j] + 2.0 * rho * beta[j] + lambda * (beta[j] > 0.0 ? 1.0 : -1.0));
    } else if (nonneg) {
      v = std::max(0.0, -grad[j] - lambda);
    } else {
      v = std::max(0.0, std::abs(grad[j]) - lambda);
    }
    rep.max_violation = std::max(rep.max_violation, v);
  }
  return rep;
}

Volume CoefficientMap::to_volume() const {
  std::vector<double> d(mask.occupancy().size(), 0.0);
  for (std::size_t c = 0; c < voxels.size(); ++c) d[voxels[c]] = beta[static_cast<Eigen::Index>(c)];
  return Volume(mask.dims(), spacing, 1, std::move(d));
}

void CoefficientMap::write_csv(const std::filesystem::path& path, const Index3& origin) const {
  std::ofstream out(path);
  if (!out) throw SelectionError(path.string() + ": cannot open for writing");
  out << "voxel_x,voxel_y,voxel_z,beta\n";
  const Dims& d = mask.dims();
  char buf[64];
  for (auto c : nonzero) {
    const std::size_t i = voxels[c];
    const std::size_t x = i % d[0], y = (i / d[0]) % d[1], z = i / (d[0] * d[1]);
    std::snprintf(buf, sizeof buf, "%.17g", beta[static_cast<Eigen::Index>(c)]);
    out << x + origin[0] << ',' << y + origin[1] << ',' << z + origin[2] << ',' << buf << '\n';
  }
  if (!out) throw SelectionError(path.string() + ": write failed");
}

namespace {

void check_compatible(const GradingMap& map, const CoefficientMap& beta) {
  if (!(map.mask() == beta.mask)) throw SelectionError("global_grading: grading map and coefficients use different masks");
}

} // namespace

GlobalGrade global_grading(const GradingMap& map, const CoefficientMap& beta) {
  check_compatible(map, beta);
  double num = 0.0, abs_sum = 0.0, signed_sum = 0.0;
  for (std::size_t c = 0; c < beta.voxels.size(); ++c) {
    const double b = beta.beta[static_cast<Eigen::Index>(c)];
    if (b == 0.0) continue;
    num += b * map.at(beta.voxels[c]);
    abs_sum += std::abs(b);
    signed_sum += b;
  }
  if (abs_sum == 0.0) throw SelectionError("global_grading: all coefficients are zero (lambda too large?)");
  GlobalGrade g;
  g.value = num / abs_sum;
  if (std::abs(signed_sum) > kLiteralDenominatorMin) g.literal = num / signed_sum;
  return g;
}

double global_grading_literal(const GradingMap& map, const CoefficientMap& beta) {
  const GlobalGrade g = global_grading(map, beta);
  if (!g.literal) throw ZeroDenominatorError("global_grading: sum of coefficients is zero");
  return *g.literal;
}

} // namespace tensorgrade
