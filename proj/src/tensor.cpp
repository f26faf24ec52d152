#include "tensorgrade/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "tensorgrade/parallel.hpp"

namespace tensorgrade {

namespace {

constexpr double kSymmetryTol = 1e-12;
constexpr double kDegenerateGap = 1e-6;
// Residual accepted from the closed form, relative to the largest |entry|.
constexpr double kClosedFormResidual = 1e-12;

void sort_descending(SymEigen& e) {
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return e.values[a] > e.values[b]; });
  SymEigen out;
  for (int k = 0; k < 3; ++k) {
    out.values[k] = e.values[order[k]];
    out.vectors.col(k) = e.vectors.col(order[k]);
  }
  e = out;
}

// Unit vector orthogonal to the rows of m (m has rank 2).
bool null_vector(const Mat3& m, Vec3& out) {
  const Vec3 r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
  const Vec3 c[3] = {r0.cross(r1), r0.cross(r2), r1.cross(r2)};
  int best = 0;
  double best_norm = c[0].squaredNorm();
  for (int k = 1; k < 3; ++k) {
    const double n = c[k].squaredNorm();
    if (n > best_norm) {
      best_norm = n;
      best = k;
    }
  }
  if (!(best_norm > 0.0)) return false;
  out = c[best] / std::sqrt(best_norm);
  return true;
}

bool closed_form(const Mat3& b, SymEigen& e) {
  const double q = b.trace() / 3.0;
  const double p1 = b(0, 1) * b(0, 1) + b(0, 2) * b(0, 2) + b(1, 2) * b(1, 2);
  const double d0 = b(0, 0) - q, d1 = b(1, 1) - q, d2 = b(2, 2) - q;
  const double p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1;
  if (!(p2 > 0.0)) return false;
  const double p = std::sqrt(p2 / 6.0);
  const Mat3 c = (b - q * Mat3::Identity()) / p;
  const double r = std::clamp(c.determinant() / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double l1 = q + 2.0 * p * std::cos(phi);
  const double l3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double l2 = 3.0 * q - l1 - l3;
  const double scale = std::max({std::abs(l1), std::abs(l3), 1e-300});
  if (std::min(l1 - l2, l2 - l3) < kDegenerateGap * scale) return false;

  Vec3 v1, v3;
  if (!null_vector(b - l1 * Mat3::Identity(), v1)) return false;
  if (!null_vector(b - l3 * Mat3::Identity(), v3)) return false;
  Vec3 v2 = v3.cross(v1);
  const double n2 = v2.norm();
  if (!(n2 > 0.5)) return false;
  v2 /= n2;

  e.values = Vec3(l1, l2, l3);
  e.vectors.col(0) = v1;
  e.vectors.col(1) = v2;
  e.vectors.col(2) = v3;
  const double tol = kClosedFormResidual * (1.0 + scale);
  for (int k = 0; k < 3; ++k)
    if ((b * e.vectors.col(k) - e.values[k] * e.vectors.col(k)).norm() > tol) return false;
  if (std::abs(v1.dot(v3)) > 1e-12) return false;
  return true;
}

void check_symmetric(const Mat3& s) {
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (!(std::abs(s(i, j) - s(j, i)) <= kSymmetryTol))
        throw TensorError("sym_eigen: input is not symmetric (entry " + std::to_string(i) + "," + std::to_string(j) + ")");
  if (!s.allFinite()) throw TensorError("sym_eigen: input is not finite");
}

// a_ij = sum_k f_k v_ik v_jk, stored directly as the upper triangle.
Sym3 recompose(const SymEigen& e, const Vec3& f) {
  const Mat3& v = e.vectors;
  auto entry = [&](int i, int j) {
    return f[0] * v(i, 0) * v(j, 0) + f[1] * v(i, 1) * v(j, 1) + f[2] * v(i, 2) * v(j, 2);
  };
  return {{entry(0, 0), entry(1, 1), entry(2, 2), entry(0, 1), entry(0, 2), entry(1, 2)}};
}

} // namespace

SymEigen sym_eigen_jacobi(const Mat3& s) {
  check_symmetric(s);
  Mat3 a = s;
  Mat3 v = Mat3::Identity();
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
    const double diag = a(0, 0) * a(0, 0) + a(1, 1) * a(1, 1) + a(2, 2) * a(2, 2);
    if (off == 0.0 || off <= 1e-36 * diag) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        // A <- R^T A R with the (p, q) Givens rotation.
        for (int k = 0; k < 3; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
  }
  SymEigen e{Vec3(a(0, 0), a(1, 1), a(2, 2)), v};
  sort_descending(e);
  return e;
}

SymEigen sym_eigen(const Mat3& s) {
  check_symmetric(s);
  const double scale = s.cwiseAbs().maxCoeff();
  if (scale == 0.0) return {Vec3::Zero(), Mat3::Identity()};
  // Symmetrize exactly so both solvers see the same matrix.
  Mat3 b = s / scale;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) b(j, i) = b(i, j);
  SymEigen e;
  if (!closed_form(b, e)) e = sym_eigen_jacobi(b);
  e.values *= scale;
  return e;
}

Sym3 deformation_tensor(const Mat3& j, bool* clamped) {
  Mat3 jtj;
  for (int r = 0; r < 3; ++r)
    for (int c = r; c < 3; ++c) {
      const double v = j(0, r) * j(0, c) + j(1, r) * j(1, c) + j(2, r) * j(2, c);
      jtj(r, c) = v;
      jtj(c, r) = v;
    }
  const SymEigen e = sym_eigen(jtj);
  bool hit = false;
  Vec3 root;
  for (int k = 0; k < 3; ++k) {
    double l = e.values[k];
    if (!(l >= kEigFloor)) {
      l = kEigFloor;
      hit = true;
    }
    root[k] = std::sqrt(l);
  }
  if (clamped) *clamped = hit;
  return recompose(e, root);
}

Sym3 tensor_log(const Sym3& phi) {
  const SymEigen e = sym_eigen(phi.matrix());
  Vec3 logs;
  for (int k = 0; k < 3; ++k) {
    if (!(e.values[k] >= kEigFloor * (1.0 - 1e-12)))
      throw TensorError("tensor_log: eigenvalue " + std::to_string(e.values[k]) + " below the SPD floor");
    logs[k] = std::log(e.values[k]);
  }
  return recompose(e, logs);
}

Sym3 tensor_exp(const Sym3& l) {
  const SymEigen e = sym_eigen(l.matrix());
  return recompose(e, e.values.array().exp().matrix());
}

Volume jacobian_field(const Volume& u, DispSign sign, unsigned threads) {
  if (u.channels() != 3) throw TensorError("jacobian_field: displacement must have 3 channels");
  const Dims& d = u.dims();
  for (int a = 0; a < 3; ++a)
    if (d[a] < 2) throw TensorError("jacobian_field: every axis needs at least 2 voxels");
  const double flip = sign == DispSign::Minus ? 1.0 : -1.0;
  const std::size_t stride[3] = {1, d[0], d[0] * d[1]};
  const std::size_t n = u.voxel_count();
  std::vector<double> out(n * 9);
  auto src = u.data();
  parallel_for(d[2], threads, [&](std::size_t z) {
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const std::size_t i = u.linear_index(x, y, z);
        const std::size_t pos[3] = {x, y, z};
        double* jm = out.data() + i * 9;
        for (int c = 0; c < 3; ++c) {
          std::size_t hi = i, lo = i;
          double span = u.spacing()[c];
          if (pos[c] == 0) {
            hi = i + stride[c];
          } else if (pos[c] == d[c] - 1) {
            lo = i - stride[c];
          } else {
            hi = i + stride[c];
            lo = i - stride[c];
            span *= 2.0;
          }
          for (int r = 0; r < 3; ++r) {
            const double grad = (src[hi * 3 + r] - src[lo * 3 + r]) / span;
            jm[r * 3 + c] = (r == c ? 1.0 : 0.0) - flip * grad;
          }
        }
      }
  });
  return Volume(d, u.spacing(), 9, std::move(out));
}

Volume deformation_tensor_field(const Volume& jacobians, TensorizeStats* stats, unsigned threads) {
  if (jacobians.channels() != 9) throw TensorError("deformation_tensor_field: Jacobian field must have 9 channels");
  const std::size_t n = jacobians.voxel_count();
  std::vector<double> out(n * 6);
  std::vector<std::uint8_t> clamped(n, 0);
  auto src = jacobians.data();
  parallel_for(n, threads, [&](std::size_t i) {
    const Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>> j(src.data() + i * 9);
    bool hit = false;
    const Sym3 phi = deformation_tensor(j, &hit);
    std::copy(phi.c.begin(), phi.c.end(), out.begin() + static_cast<std::ptrdiff_t>(i * 6));
    clamped[i] = hit ? 1 : 0;
  });
  if (stats) {
    stats->voxels += n;
    for (auto c : clamped) stats->clamped += c;
  }
  return Volume(jacobians.dims(), jacobians.spacing(), 6, std::move(out));
}

Volume log_tensor_field(const Volume& tensors, unsigned threads) {
  if (tensors.channels() != 6) throw TensorError("log_tensor_field: tensor field must have 6 channels");
  const std::size_t n = tensors.voxel_count();
  std::vector<double> out(n * 6);
  parallel_for(n, threads, [&](std::size_t i) {
    const Sym3 l = tensor_log(Sym3::from_span(tensors.voxel(i)));
    std::copy(l.c.begin(), l.c.end(), out.begin() + static_cast<std::ptrdiff_t>(i * 6));
  });
  return Volume(tensors.dims(), tensors.spacing(), 6, std::move(out));
}

Volume tensorize(const Volume& displacement, DispSign sign, TensorizeStats* stats, unsigned threads) {
  const Volume j = jacobian_field(displacement, sign, threads);
  const Volume phi = deformation_tensor_field(j, stats, threads);
  return log_tensor_field(phi, threads);
}

} // namespace tensorgrade
