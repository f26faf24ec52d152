#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "tensorgrade/grading.hpp"
#include "tensorgrade/volume.hpp"

namespace tensorgrade {

inline constexpr double kDefaultRho = 0.2;
inline constexpr double kDefaultLambda = 0.09;

class SelectionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised when sum(beta) vanishes and the signed-denominator global grade is
/// undefined.
class ZeroDenominatorError : public SelectionError {
public:
  using SelectionError::SelectionError;
};

/// Rows are templates, columns are mask voxels (ascending linear index).
struct DesignMatrix {
  Eigen::MatrixXd g;
  Eigen::VectorXd y;
  RoiMask mask;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::size_t> voxels;
};

/// Stacks template grading maps (all on one mask) with their +-1 labels.
DesignMatrix design_matrix(std::span<const GradingMap> maps, std::span<const double> labels);

struct ElasticNetOptions {
  double rho = kDefaultRho;
  double lambda = kDefaultLambda;
  double tol = 1e-7;
  std::size_t max_iter = 10000;
  bool nonneg = false;
  bool record_objective = false;
};

struct CoefficientMap {
  Eigen::VectorXd beta;
  std::vector<std::size_t> nonzero; ///< column positions with beta != 0
  std::vector<std::size_t> voxels;  ///< column -> linear voxel index
  RoiMask mask;
  Spacing spacing{1.0, 1.0, 1.0};
  double rho = 0.0;
  double lambda = 0.0;
  bool nonneg = false;
  bool converged = false;
  std::size_t sweeps = 0;
  std::vector<double> objective; ///< per sweep, when recorded

  Volume to_volume() const;
  /// Rows `voxel_x,voxel_y,voxel_z,beta` for nonzero coefficients; `origin`
  /// is added to the coordinates (e.g. the ROI box corner).
  void write_csv(const std::filesystem::path& path, const Index3& origin = {0, 0, 0}) const;
};

/// F(beta) = 1/2 ||G beta - Y||^2 + rho ||beta||^2 + lambda ||beta||_1.
double elastic_net_objective(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                             double rho, double lambda);

/// Cyclic coordinate descent on F with the exact update
///   beta_j <- S(c_j, lambda) / (||G_j||^2 + 2 rho),
/// c_j the correlation of column j with the partial residual. Stops when no
/// coordinate moves by `tol` in a sweep and the KKT residual is below a tenth
/// of the check_kkt tolerance; after `max_iter` sweeps the last iterate is
/// returned with `converged == false`. Every few sweeps the reduced normal
/// equations on the current support and signs are solved directly; the
/// iterate moves toward that solution, dropping any coordinate whose sign
/// would flip, until a full step keeps every sign. Returns zero without
/// iterating when lambda >= ||G^T Y||_inf.
CoefficientMap elastic_net_fit(const DesignMatrix& design, const ElasticNetOptions& opts = {});
Eigen::VectorXd elastic_net_solve(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const ElasticNetOptions& opts,
                                  bool* converged = nullptr, std::size_t* sweeps = nullptr,
                                  std::vector<double>* objective = nullptr);

struct KktReport {
  double max_violation = 0.0;
  double tol = 0.0;
  bool ok() const { return max_violation <= tol; }
};

/// Optimality residuals of F at `beta` with tolerance 1e-6 (1 + ||Y||).
KktReport check_kkt(const Eigen::MatrixXd& g, const Eigen::VectorXd& y, const Eigen::VectorXd& beta, double rho,
                    double lambda, bool nonneg = false);

struct GlobalGrade {
  double value = 0.0;            ///< sum beta_i g_i / sum |beta_i|
  std::optional<double> literal; ///< sum beta_i g_i / sum beta_i, when |sum beta_i| > 1e-12
};

/// Coefficient-weighted aggregate of a subject grading map. Throws
/// SelectionError when beta is identically zero or the grids differ.
GlobalGrade global_grading(const GradingMap& map, const CoefficientMap& beta);

/// Signed-denominator variant; throws ZeroDenominatorError when |sum beta| <= 1e-12.
double global_grading_literal(const GradingMap& map, const CoefficientMap& beta);

} // namespace tensorgrade
