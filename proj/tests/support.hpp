#pragma once

// Test-only helpers: scratch directories and independent reference
// implementations used as oracles by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <unistd.h>
#include <vector>

#include <Eigen/Dense>

#include "tensorgrade/random.hpp"
#include "tensorgrade/tensor.hpp"
#include "tensorgrade/volume.hpp"

namespace tgtest {

namespace fs = std::filesystem;
using tensorgrade::Mat3;
using tensorgrade::Rng;

class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    path_ = fs::temp_directory_path() / ("tgtest-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

private:
  fs::path path_;
};

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Sorted relative paths of every regular file under `root`.
inline std::vector<fs::path> list_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

/// Uniform random rotation from a normalized Gaussian quaternion.
inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

/// SPD matrix with log-eigenvalues drawn from N(0, spread^2).
inline Mat3 random_spd(Rng& rng, double spread = 1.0) {
  const Mat3 r = random_rotation(rng);
  Eigen::Vector3d ev;
  for (int k = 0; k < 3; ++k) ev[k] = std::exp(spread * rng.normal());
  return r * ev.asDiagonal() * r.transpose();
}

inline Mat3 random_symmetric(Rng& rng, double scale = 1.0) {
  Mat3 a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a(r, c) = scale * rng.normal();
  return 0.5 * (a + a.transpose());
}

/// Frobenius distance computed as Trace((A - B)^2)^(1/2) on full matrices.
inline double trace_distance(const Mat3& a, const Mat3& b) {
  const Mat3 d = a - b;
  double tr = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) tr += d(i, k) * d(k, i);
  return std::sqrt(tr);
}

/// Matrix exponential of a symmetric matrix by scaling and squaring of its
/// Taylor series; independent of any eigendecomposition.
inline Mat3 expm_taylor(const Mat3& a) {
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (norm / std::ldexp(1.0, s) > 0.25) ++s;
  const Mat3 b = a / std::ldexp(1.0, s);
  Mat3 term = Mat3::Identity(), sum = Mat3::Identity();
  for (int k = 1; k < 30; ++k) {
    term = term * b / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

inline double rel_frobenius(const Mat3& a, const Mat3& ref) { return (a - ref).norm() / ref.norm(); }

/// Straight transcription of the grading rule with no precomputation: for
/// every mask voxel and template, sum the per-voxel tensor distance over the
/// clipped patch (z, y, x order), then take the similarity-weighted vote.
inline std::vector<double> naive_grade_map(const tensorgrade::Volume& s, const std::vector<tensorgrade::Volume>& t,
                                           const std::vector<double>& y, const tensorgrade::RoiMask& mask,
                                           std::size_t radius) {
  const auto& d = s.dims();
  std::vector<double> out(s.voxel_count(), std::numeric_limits<double>::quiet_NaN());
  auto voxel_dist = [](const double* a, const double* b) {
    const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    const double d3 = a[3] - b[3], d4 = a[4] - b[4], d5 = a[5] - b[5];
    return std::sqrt(d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * (d3 * d3 + d4 * d4 + d5 * d5));
  };
  const long r = static_cast<long>(radius);
  for (std::size_t cz = 0; cz < d[2]; ++cz)
    for (std::size_t cy = 0; cy < d[1]; ++cy)
      for (std::size_t cx = 0; cx < d[0]; ++cx) {
        const std::size_t ci = cx + d[0] * (cy + d[1] * cz);
        if (!mask.contains(ci)) continue;
        std::vector<double> dist(t.size(), 0.0);
        for (std::size_t k = 0; k < t.size(); ++k) {
          double sum = 0.0;
          for (long z = static_cast<long>(cz) - r; z <= static_cast<long>(cz) + r; ++z)
            for (long yy = static_cast<long>(cy) - r; yy <= static_cast<long>(cy) + r; ++yy)
              for (long x = static_cast<long>(cx) - r; x <= static_cast<long>(cx) + r; ++x) {
                if (x < 0 || yy < 0 || z < 0 || x >= static_cast<long>(d[0]) || yy >= static_cast<long>(d[1]) ||
                    z >= static_cast<long>(d[2]))
                  continue;
                const std::size_t i = static_cast<std::size_t>(x) + d[0] * (static_cast<std::size_t>(yy) +
                                                                            d[1] * static_cast<std::size_t>(z));
                sum += voxel_dist(s.data().data() + 6 * i, t[k].data().data() + 6 * i);
              }
          dist[k] = sum;
        }
        double h = dist[0];
        for (double v : dist) h = std::min(h, v);
        h = std::max(h, 1e-12);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < t.size(); ++k) {
          const double w = std::exp(-dist[k] / h);
          num += w * y[k];
          den += w;
        }
        out[ci] = num / den;
      }
  return out;
}

/// Random 6-channel field whose voxels are logs of random SPD matrices.
inline tensorgrade::Volume random_log_field(Rng& rng, const tensorgrade::Dims& dims, double spread = 0.3) {
  std::vector<double> v;
  const std::size_t n = dims[0] * dims[1] * dims[2];
  v.reserve(6 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Mat3 l = random_symmetric(rng, spread);
    for (double c : tensorgrade::Sym3::from_matrix(l).c) v.push_back(c);
  }
  return tensorgrade::Volume(dims, {1.0, 1.0, 1.0}, 6, std::move(v));
}

/// Soft-margin linear SVM solved by enumerating active sets of the
/// primal KKT system. For every partition of the points into margin (y f = 1),
/// inside (y f > 1, alpha = 0) and violating (y f < 1, alpha = C) sets the
/// linear equations for (w, b, alpha) are solved and the candidate is kept if
/// it is primal and dual feasible; the lowest primal objective wins. The bias
/// returned is the midpoint of all optimal biases for that w.
struct QpSolution {
  Eigen::VectorXd w;
  double b = 0.0;
  double primal = std::numeric_limits<double>::infinity();
  bool found = false;
};

inline QpSolution brute_force_svm(const Eigen::MatrixXd& x, const std::vector<int>& y, double c) {
  const int n = static_cast<int>(x.rows()), d = static_cast<int>(x.cols());
  QpSolution best;
  int total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  for (int code = 0; code < total; ++code) {
    std::vector<int> state(n); // 0 inside, 1 margin, 2 bound
    for (int i = 0, v = code; i < n; ++i, v /= 3) state[i] = v % 3;
    std::vector<int> margin;
    Eigen::VectorXd fixed_sum = Eigen::VectorXd::Zero(d);
    double fixed_y = 0.0;
    for (int i = 0; i < n; ++i) {
      if (state[i] == 1) margin.push_back(i);
      if (state[i] == 2) {
        fixed_sum += c * y[i] * x.row(i).transpose();
        fixed_y += c * y[i];
      }
    }
    const int m = static_cast<int>(margin.size());
    Eigen::VectorXd w;
    double b = 0.0;
    Eigen::VectorXd alpha_m(m);
    if (m == 0) {
      // b is free; pick any feasible b later. Only valid with balanced bounds.
      if (std::abs(fixed_y) > 1e-12) continue;
      w = fixed_sum;
      double lo = -std::numeric_limits<double>::infinity(), hi = -lo;
      for (int i = 0; i < n; ++i) {
        const double f = x.row(i).dot(w);
        // inside: y (f + b) >= 1, bound: y (f + b) <= 1
        if (state[i] == 0) (y[i] > 0 ? lo = std::max(lo, 1 - f) : hi = std::min(hi, -1 - f));
        if (state[i] == 2) (y[i] > 0 ? hi = std::min(hi, 1 - f) : lo = std::max(lo, -1 - f));
      }
      if (lo > hi + 1e-9) continue;
      b = std::isfinite(lo) ? (std::isfinite(hi) ? 0.5 * (lo + hi) : lo) : (std::isfinite(hi) ? hi : 0.0);
    } else {
      // Unknowns alpha_m (m), b: y_i (x_i . (sum_j a_j y_j x_j + fixed) + b) = 1, sum a_j y_j + fixed_y = 0.
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m + 1, m + 1);
      Eigen::VectorXd rhs(m + 1);
      for (int p = 0; p < m; ++p) {
        const int i = margin[p];
        for (int q = 0; q < m; ++q) {
          const int j = margin[q];
          a(p, q) = y[j] * x.row(i).dot(x.row(j));
        }
        a(p, m) = 1.0;
        rhs[p] = y[i] - x.row(i).dot(fixed_sum);
      }
      for (int q = 0; q < m; ++q) a(m, q) = y[margin[q]];
      rhs[m] = -fixed_y;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
      if (lu.rank() < m + 1) {
        // Degenerate (e.g. collinear margin points); least-norm solution.
        const Eigen::VectorXd sol = a.completeOrthogonalDecomposition().solve(rhs);
        if ((a * sol - rhs).norm() > 1e-9) continue;
        alpha_m = sol.head(m);
        b = sol[m];
      } else {
        const Eigen::VectorXd sol = lu.solve(rhs);
        alpha_m = sol.head(m);
        b = sol[m];
      }
      bool ok = true;
      for (int p = 0; p < m; ++p)
        if (alpha_m[p] < -1e-9 || alpha_m[p] > c + 1e-9) ok = false;
      if (!ok) continue;
      w = fixed_sum;
      for (int p = 0; p < m; ++p) w += alpha_m[p] * y[margin[p]] * x.row(margin[p]).transpose();
    }
    bool ok = true;
    for (int i = 0; i < n && ok; ++i) {
      const double yf = y[i] * (x.row(i).dot(w) + b);
      if (state[i] == 0 && yf < 1 - 1e-9) ok = false;
      if (state[i] == 2 && yf > 1 + 1e-9) ok = false;
    }
    if (!ok) continue;
    double hinge = 0.0;
    for (int i = 0; i < n; ++i) hinge += std::max(0.0, 1.0 - y[i] * (x.row(i).dot(w) + b));
    const double primal = 0.5 * w.squaredNorm() + c * hinge;
    if (primal < best.primal - 1e-12) {
      best.w = w;
      best.b = b;
      best.primal = primal;
      best.found = true;
    }
  }
  if (best.found) {
    // The hinge sum in b has slope -P left of every breakpoint y_i - f_i and
    // gains one per breakpoint, so it is flat between the P-th and (P+1)-th.
    std::vector<double> t;
    int pos = 0;
    for (int i = 0; i < n; ++i) {
      t.push_back(y[i] - x.row(i).dot(best.w));
      pos += y[i] > 0;
    }
    std::sort(t.begin(), t.end());
    best.b = 0.5 * (t[static_cast<std::size_t>(pos) - 1] + t[static_cast<std::size_t>(pos)]);
  }
  return best;
}

} // namespace tgtest
