#include <cmath>
#include <numbers>

#include "doctest.h"
#include "support.hpp"
#include "tensorgrade/tensor.hpp"

using namespace tensorgrade;
using tgtest::Rng;

namespace {

void check_eigen(const Mat3& s, const SymEigen& e) {
  for (int k = 0; k < 3; ++k) {
    const Vec3 v = e.vectors.col(k);
    CHECK((s * v - e.values[k] * v).norm() <= 1e-9 * (1.0 + std::abs(e.values[k])));
  }
  CHECK((e.vectors.transpose() * e.vectors - Mat3::Identity()).norm() <= 1e-10);
  CHECK(e.values[0] >= e.values[1]);
  CHECK(e.values[1] >= e.values[2]);
  const Mat3 back = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
  CHECK((back - s).norm() <= 1e-9 * (1.0 + s.norm()));
}

Volume field_from(const Dims& d, Spacing h, auto&& u) {
  std::vector<double> data;
  data.reserve(d[0] * d[1] * d[2] * 3);
  for (std::size_t z = 0; z < d[2]; ++z)
    for (std::size_t y = 0; y < d[1]; ++y)
      for (std::size_t x = 0; x < d[0]; ++x) {
        const Vec3 p(static_cast<double>(x) * h[0], static_cast<double>(y) * h[1], static_cast<double>(z) * h[2]);
        const Vec3 v = u(p);
        data.insert(data.end(), {v[0], v[1], v[2]});
      }
  return Volume(d, h, 3, std::move(data));
}

Mat3 jacobian_at(const Volume& j, std::size_t x, std::size_t y, std::size_t z) {
  const auto v = j.voxel(j.linear_index(x, y, z));
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v[static_cast<std::size_t>(r * 3 + c)];
  return m;
}

} // namespace

TEST_CASE("sym_eigen on fixed matrices") {
  const SymEigen id = sym_eigen(Mat3::Identity());
  CHECK(id.values == Vec3(1, 1, 1));
  check_eigen(Mat3::Identity(), id);

  const Mat3 d = Vec3(1, 3, 2).asDiagonal();
  const SymEigen e = sym_eigen(d);
  CHECK(e.values[0] == doctest::Approx(3).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(2).epsilon(1e-14));
  CHECK(e.values[2] == doctest::Approx(1).epsilon(1e-14));
  CHECK(std::abs(e.vectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(e.vectors(2, 1)) == doctest::Approx(1.0));
  CHECK(std::abs(e.vectors(0, 2)) == doctest::Approx(1.0));
  check_eigen(d, e);

  Mat3 asym = Mat3::Identity();
  asym(0, 1) = 1e-6;
  CHECK_THROWS_AS(sym_eigen(asym), TensorError);
}

TEST_CASE("sym_eigen on random and nearly degenerate matrices") {
  Rng rng(3, 0);
  for (int i = 0; i < 2000; ++i) {
    const Mat3 s = tgtest::random_symmetric(rng, std::exp(3.0 * rng.normal()));
    check_eigen(s, sym_eigen(s));
  }
  for (double gap : {0.0, 1e-14, 1e-10, 1e-7, 1e-5}) {
    for (int i = 0; i < 50; ++i) {
      const Mat3 r = tgtest::random_rotation(rng);
      const Vec3 ev(2.0, 2.0 + gap, rng.uniform(-1.0, 3.0));
      Mat3 s = r * ev.asDiagonal() * r.transpose();
      s = 0.5 * (s + s.transpose());
      check_eigen(s, sym_eigen(s));
      check_eigen(s, sym_eigen_jacobi(s));
    }
  }
}

TEST_CASE("deformation tensor examples") {
  CHECK(deformation_tensor(Mat3::Identity()) == Sym3::identity());

  Rng rng(4, 0);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = tgtest::random_rotation(rng);
    const Mat3 phi = deformation_tensor(r).matrix();
    CHECK((phi - Mat3::Identity()).norm() < 1e-12);
  }

  const Mat3 phi = deformation_tensor(Vec3(2.0, 0.5, 1.0).asDiagonal()).matrix();
  CHECK((phi - Mat3(Vec3(2.0, 0.5, 1.0).asDiagonal())).norm() < 1e-14);

  // det Phi = |det J| when nothing is clamped, at least floor^3 otherwise.
  for (int i = 0; i < 1000; ++i) {
    Mat3 j;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) j(r, c) = rng.normal();
    bool clamped = false;
    const double det = deformation_tensor(j, &clamped).matrix().determinant();
    CHECK(det >= std::pow(kEigFloor, 3) * (1 - 1e-9));
    if (!clamped) CHECK(det == doctest::Approx(std::abs(j.determinant())).epsilon(1e-9));
  }

  bool clamped = false;
  const Mat3 singular = Vec3(1.0, 1.0, 0.0).asDiagonal();
  const Sym3 s = deformation_tensor(singular, &clamped);
  CHECK(clamped);
  CHECK(s.matrix().determinant() == doctest::Approx(std::sqrt(kEigFloor)).epsilon(1e-6));
}

TEST_CASE("tensor log and exp") {
  CHECK(tensor_log(Sym3::identity()) == Sym3{});
  const Sym3 l = tensor_log(Sym3{{std::numbers::e, 1, 1, 0, 0, 0}});
  CHECK(l.c[0] == doctest::Approx(1.0).epsilon(1e-15));
  for (int k = 1; k < 6; ++k) CHECK(std::abs(l.c[static_cast<std::size_t>(k)]) < 1e-15);

  CHECK_THROWS_AS(tensor_log(Sym3{{1, 1, 1e-7, 0, 0, 0}}), TensorError);

  // exp checked against a Taylor-series exponential that never diagonalizes.
  Rng rng(5, 0);
  for (int i = 0; i < 500; ++i) {
    const Mat3 a = tgtest::random_symmetric(rng, 1.0);
    const Mat3 ref = tgtest::expm_taylor(a);
    CHECK(tgtest::rel_frobenius(tensor_exp(Sym3::from_matrix(a)).matrix(), ref) < 1e-12);
  }
}

TEST_CASE("log distance") {
  const Sym3 a = tensor_log(Sym3{{2, 2, 2, 0, 0, 0}});
  const Sym3 b = tensor_log(Sym3::identity());
  CHECK(log_distance_voxel(a, b) == doctest::Approx(std::sqrt(3.0) * std::log(2.0)).epsilon(1e-14));
  CHECK(log_distance_voxel(a, a) == 0.0);

  Rng rng(6, 0);
  for (int i = 0; i < 1000; ++i) {
    const Mat3 x = tgtest::random_symmetric(rng), y = tgtest::random_symmetric(rng);
    const double ref = tgtest::trace_distance(x, y);
    CHECK(log_distance_voxel(Sym3::from_matrix(x), Sym3::from_matrix(y)) == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("jacobian of zero, affine and scaling fields") {
  const Dims d{5, 6, 4};
  const Spacing h{0.5, 1.0, 2.0};
  const Volume zero = Volume::zeros(d, h, 3);
  const Volume jz = jacobian_field(zero);
  CHECK(jz.channels() == 9);
  for (std::size_t i = 0; i < jz.voxel_count(); ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) CHECK(jz.voxel(i)[static_cast<std::size_t>(r * 3 + c)] == (r == c ? 1.0 : 0.0));

  // Dyadic coefficients and spacings keep the arithmetic exact.
  Mat3 a;
  a << 0.125, -0.25, 0.5, 0.375, 0.0625, -0.75, 1.0, 0.5, -0.125;
  const Volume u = field_from(d, h, [&](const Vec3& p) -> Vec3 { return a * p; });
  const Volume j = jacobian_field(u);
  for (std::size_t z = 1; z + 1 < d[2]; ++z)
    for (std::size_t y = 1; y + 1 < d[1]; ++y)
      for (std::size_t x = 1; x + 1 < d[0]; ++x) CHECK(jacobian_at(j, x, y, z) == Mat3(Mat3::Identity() - a));
  // One-sided differences are exact on linear fields too.
  CHECK(jacobian_at(j, 0, 0, 0) == Mat3(Mat3::Identity() - a));

  // u = (1 - alpha) x with alpha = 0.8 contracts toward the origin: J = 0.8 I.
  const Volume s = field_from(d, {1, 1, 1}, [](const Vec3& p) -> Vec3 { return 0.2 * p; });
  const Mat3 js = jacobian_at(jacobian_field(s), 2, 2, 2);
  CHECK((js - 0.8 * Mat3::Identity()).norm() < 1e-15);

  // The opposite sign convention adds the gradient.
  CHECK(jacobian_at(jacobian_field(u, DispSign::Plus), 2, 2, 2) == Mat3(Mat3::Identity() + a));

  CHECK_THROWS_AS(jacobian_field(Volume::zeros({1, 4, 4}, {1, 1, 1}, 3)), TensorError);
  CHECK_THROWS_AS(jacobian_field(Volume::zeros({4, 4, 4}, {1, 1, 1}, 1)), TensorError);
}

TEST_CASE("central differences converge at second order") {
  const double length = 4.0;
  const Vec3 omega(0.7, -0.4, 0.9);
  const Vec3 amp(0.2, 0.15, 0.1), phase(0.3, 1.1, -0.5);
  auto u = [&](const Vec3& p) -> Vec3 {
    Vec3 v;
    for (int r = 0; r < 3; ++r) v[r] = amp[r] * std::sin(omega.dot(p) + phase[r]);
    return v;
  };
  std::vector<double> errors;
  for (double h : {0.5, 0.25, 0.125}) {
    const std::size_t n = static_cast<std::size_t>(std::lround(length / h)) + 1;
    const Volume j = jacobian_field(field_from({n, n, n}, {h, h, h}, u));
    double err = 0.0;
    // Interior points shared by all three grids.
    const std::size_t step = static_cast<std::size_t>(std::lround(0.5 / h));
    for (std::size_t z = step; z + step < n; z += step)
      for (std::size_t y = step; y + step < n; y += step)
        for (std::size_t x = step; x + step < n; x += step) {
          const Vec3 p(x * h, y * h, z * h);
          Mat3 exact = Mat3::Identity();
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) exact(r, c) -= amp[r] * omega[c] * std::cos(omega.dot(p) + phase[r]);
          err = std::max(err, (jacobian_at(j, x, y, z) - exact).cwiseAbs().maxCoeff());
        }
    errors.push_back(err);
  }
  CHECK(std::log2(errors[0] / errors[1]) >= 1.9);
  CHECK(std::log2(errors[1] / errors[2]) >= 1.9);
}

TEST_CASE("tensorize pipeline on a zero field gives zero logs") {
  const Volume u = Volume::zeros({4, 4, 4}, {1, 1, 1}, 3);
  TensorizeStats st;
  const Volume l = tensorize(u, DispSign::Minus, &st, 2);
  CHECK(l.channels() == 6);
  CHECK(st.voxels == 64);
  CHECK(st.clamped == 0);
  for (double x : l.data()) CHECK(x == 0.0);
}

TEST_CASE("tensorize is independent of the thread count") {
  Rng rng(8, 0);
  std::vector<double> data(7 * 6 * 5 * 3);
  for (auto& x : data) x = 0.2 * rng.normal();
  const Volume u({7, 6, 5}, {1, 1, 1}, 3, data);
  const Volume a = tensorize(u, DispSign::Minus, nullptr, 1);
  const Volume b = tensorize(u, DispSign::Minus, nullptr, 4);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end()));
}
