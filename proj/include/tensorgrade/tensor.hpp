#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>

#include <Eigen/Dense>

#include "tensorgrade/volume.hpp"

namespace tensorgrade {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Lower bound applied to the eigenvalues of J^T J before the square root.
inline constexpr double kEigFloor = 1e-6;

/// Symmetric 3x3 matrix stored as (a11, a22, a33, a12, a13, a23). This is
/// also the channel order of 6-channel tensor volumes on disk.
struct Sym3 {
  std::array<double, 6> c{};

  static Sym3 from_matrix(const Mat3& m) {
    return {{m(0, 0), m(1, 1), m(2, 2), m(0, 1), m(0, 2), m(1, 2)}};
  }
  static Sym3 from_span(std::span<const double> v) { return {{v[0], v[1], v[2], v[3], v[4], v[5]}}; }
  static Sym3 identity() { return {{1.0, 1.0, 1.0, 0.0, 0.0, 0.0}}; }

  Mat3 matrix() const {
    Mat3 m;
    m << c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2];
    return m;
  }
  bool operator==(const Sym3&) const = default;
};

struct SymEigen {
  Vec3 values;  ///< descending
  Mat3 vectors; ///< column k pairs with values[k]
};

class TensorError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Eigen-decomposition of a symmetric 3x3 matrix.
///
/// Eigenvalues come from the trigonometric solution of the characteristic
/// cubic; eigenvectors from cross products of rows of (S - lambda I). When two
/// eigenvalues are closer than 1e-6 relative, or the closed-form vectors fail
/// the residual check, the result is recomputed with cyclic Jacobi rotations.
/// Throws TensorError if |S - S^T| exceeds 1e-12 anywhere.
SymEigen sym_eigen(const Mat3& s);

/// Cyclic Jacobi eigensolver, always iterative. Exposed for testing.
SymEigen sym_eigen_jacobi(const Mat3& s);

/// Phi = sqrt(J^T J). Eigenvalues of J^T J below kEigFloor are raised to it;
/// `clamped` (if given) reports whether that happened.
Sym3 deformation_tensor(const Mat3& j, bool* clamped = nullptr);

/// Matrix logarithm of an SPD tensor. Throws TensorError if an eigenvalue is
/// below kEigFloor.
Sym3 tensor_log(const Sym3& phi);

/// Matrix exponential of a symmetric matrix.
Sym3 tensor_exp(const Sym3& l);

/// Frobenius norm of (a - b), i.e. Trace((a-b)^2)^(1/2).
inline double log_distance_voxel(std::span<const double> a, std::span<const double> b) {
  const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
  const double d3 = a[3] - b[3], d4 = a[4] - b[4], d5 = a[5] - b[5];
  return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * (d3 * d3 + d4 * d4 + d5 * d5));
}
inline double log_distance_voxel(const Sym3& a, const Sym3& b) { return log_distance_voxel(a.c, b.c); }

/// Sign convention of displacement inputs: `Minus` means the registration
/// maps x to x - u (J = I - grad u); `Plus` means x + u, which is negated on
/// ingestion.
enum class DispSign { Minus, Plus };

/// 9-channel row-major Jacobian field of a 3-channel displacement field.
/// Derivatives are taken in physical units: central differences inside,
/// one-sided differences on the first and last slice of each axis.
Volume jacobian_field(const Volume& displacement, DispSign sign = DispSign::Minus, unsigned threads = 1);

struct TensorizeStats {
  std::size_t voxels = 0;
  std::size_t clamped = 0;
};

/// 6-channel field of Phi = sqrt(J^T J) from a 9-channel Jacobian field.
Volume deformation_tensor_field(const Volume& jacobians, TensorizeStats* stats = nullptr, unsigned threads = 1);

/// 6-channel field of log(Phi) from a 6-channel SPD field.
Volume log_tensor_field(const Volume& tensors, unsigned threads = 1);

/// displacement -> Jacobian -> Phi -> log(Phi).
Volume tensorize(const Volume& displacement, DispSign sign, TensorizeStats* stats = nullptr, unsigned threads = 1);

} // namespace tensorgrade
