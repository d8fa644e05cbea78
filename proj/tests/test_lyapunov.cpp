#include "doctest.h"

#include "cocycle/dynamics.hpp"
#include "cocycle/lyapunov.hpp"
#include "cocycle/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace cocycle;

namespace {

const BaseSystem kRotation = BaseSystem::circle_rotation(std::sqrt(2.0) - 1.0);

Vector zero_state() {
  Vector x(1);
  x << 0.25;
  return x;
}

Matrix random_sl(Rng& rng, int d) {
  Matrix m(d, d);
  do {
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
  } while (std::abs(m.determinant()) < 0.05);
  if (m.determinant() < 0) m.row(0) = -m.row(0);
  return special_linear_reproject(m);
}

// exp(J * S) for symmetric S is symplectic for the anti-diagonal form.
Matrix random_symplectic(Rng& rng, int d, double scale) {
  SymplecticForm form(d);
  Matrix s(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) s(i, j) = s(j, i) = scale * rng.normal();
  Matrix g = form.J * s;
  Matrix out = Matrix::Identity(d, d);
  Matrix term = Matrix::Identity(d, d);
  for (int k = 1; k <= 40; ++k) {
    term = term * g / static_cast<double>(k);
    out += term;
  }
  return out;
}

// Sorted log-moduli of eigenvalues, descending.
std::vector<double> log_eigen_moduli(const Matrix& m) {
  Eigen::EigenSolver<Matrix> eig(m);
  std::vector<double> out;
  for (int i = 0; i < m.rows(); ++i)
    out.push_back(std::log(std::abs(eig.eigenvalues()[i])));
  std::sort(out.begin(), out.end(), std::greater<double>());
  return out;
}

double projector_distance(const Subspace& a, const Subspace& b) {
  return (a.basis * a.basis.transpose() - b.basis * b.basis.transpose())
      .norm();
}

}  // namespace

TEST_CASE("qr spectrum on isometries and diagonal matrices") {
  Cocycle rot =
      Cocycle::constant_cocycle(plane_rotation(2, 0, 1, 0.7), GroupTag::SpecialLinear);
  LyapunovEstimate iso = qr_spectrum(kRotation, rot, zero_state(), 1000);
  CHECK(std::abs(iso.exponents[0]) <= 1e-9);
  CHECK(std::abs(iso.exponents[1]) <= 1e-9);
  CHECK(iso.horizon == 1000);
  CHECK(iso.cadence == 10);

  Matrix d(2, 2);
  d << 2.0, 0.0, 0.0, 0.5;
  Cocycle diag = Cocycle::constant_cocycle(d, GroupTag::SpecialLinear);
  LyapunovEstimate hyp = qr_spectrum(kRotation, diag, zero_state(), 500);
  CHECK(hyp.exponents[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(hyp.exponents[1] == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(hyp.exponents[0] >= hyp.exponents[1]);  // sorted
  CHECK(hyp.tail_drift <= 1e-12);
}

TEST_CASE("qr spectrum matches the transfer-matrix eigenvalue") {
  Cocycle c = Cocycle::schrodinger(3.0, Potential::zero());
  LyapunovEstimate est = qr_spectrum(kRotation, c, zero_state(), 100000);
  double want = std::log((3.0 + std::sqrt(5.0)) / 2.0);
  CHECK(want == doctest::Approx(0.962424).epsilon(1e-5));
  CHECK(est.exponents[0] == doctest::Approx(want).epsilon(1e-3));
  // Special-linear sum stays near zero.
  CHECK(std::abs(est.exponents.sum()) <= 1e-6 * 2);
}

TEST_CASE("oversized cadence is rejected on overflow") {
  Matrix huge(2, 2);
  huge << 1e100, 0.0, 0.0, 1e90;
  Cocycle c = Cocycle::constant_cocycle(huge);
  CHECK_THROWS_WITH_AS(qr_spectrum(kRotation, c, zero_state(), 10, 3),
                       "cadence too large", std::runtime_error);
  // A cadence of 1 keeps the same cocycle perfectly tractable.
  LyapunovEstimate est = qr_spectrum(kRotation, c, zero_state(), 10, 1);
  CHECK(est.exponents[0] == doctest::Approx(std::log(1e100)).epsilon(1e-12));
}

TEST_CASE("special-linear exponent sums vanish for random cocycles") {
  Rng rng(5150);
  for (int trial = 0; trial < 6; ++trial) {
    int d = trial % 2 == 0 ? 3 : 4;
    Cocycle c =
        Cocycle::constant_cocycle(random_sl(rng, d), GroupTag::SpecialLinear);
    LyapunovEstimate est = qr_spectrum(kRotation, c, zero_state(), 20000);
    CHECK(std::abs(est.exponents.sum()) <= 1e-6 * d);
  }
}

TEST_CASE("symplectic exponents pair up with opposite signs") {
  Rng rng(77);
  Matrix d4 = Matrix::Zero(4, 4);
  d4.diagonal() << 2.0, 2.0, 0.5, 0.5;

  Cocycle plain = Cocycle::constant_cocycle(d4, GroupTag::Symplectic);
  LyapunovEstimate est = qr_spectrum(kRotation, plain, zero_state(), 100000);
  for (int j = 0; j < 4; ++j)
    CHECK(std::abs(est.exponents[j] + est.exponents[3 - j]) <= 1e-4);

  Matrix s = random_symplectic(rng, 4, 0.2);
  Matrix conj = s * d4 * s.inverse();
  Cocycle twisted = Cocycle::constant_cocycle(conj, GroupTag::Symplectic);
  LyapunovEstimate est2 = qr_spectrum(kRotation, twisted, zero_state(), 100000);
  for (int j = 0; j < 4; ++j)
    CHECK(std::abs(est2.exponents[j] + est2.exponents[3 - j]) <= 1e-4);
}

TEST_CASE("exponents are invariant under constant conjugation") {
  Rng rng(31);
  Matrix a = random_sl(rng, 2);
  Matrix s = random_sl(rng, 2);
  Cocycle c1 = Cocycle::constant_cocycle(a, GroupTag::SpecialLinear);
  Cocycle c2 =
      Cocycle::constant_cocycle(s * a * s.inverse(), GroupTag::SpecialLinear);
  LyapunovEstimate e1 = qr_spectrum(kRotation, c1, zero_state(), 20000);
  LyapunovEstimate e2 = qr_spectrum(kRotation, c2, zero_state(), 20000);
  for (int i = 0; i < 2; ++i)
    CHECK(std::abs(e1.exponents[i] - e2.exponents[i]) <= 2e-3);
}

TEST_CASE("integrated exponent is exact on piecewise-constant families") {
  Matrix d(2, 2);
  d << 2.0, 0.0, 0.0, 0.5;
  Cocycle diag = Cocycle::constant_cocycle(d, GroupTag::SpecialLinear);
  for (int n : {8, 40, 200}) {
    IntegratedExponent r = integrated_exponent(kRotation, diag, 1, n);
    CHECK(r.exact);
    CHECK(r.std_error == 0.0);
    CHECK(r.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.at_half == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.at_quarter == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  Cocycle rot =
      Cocycle::constant_cocycle(plane_rotation(2, 0, 1, 0.9), GroupTag::SpecialLinear);
  IntegratedExponent r0 = integrated_exponent(kRotation, rot, 1, 64);
  CHECK(std::abs(r0.value) <= 1e-12);
  CHECK(std::abs(r0.at_half) <= 1e-12);
}

TEST_CASE("integrated exponent descends subadditively under doubling") {
  Matrix d(2, 2);
  d << 2.0, 0.0, 0.0, 0.5;
  Cocycle shear = Cocycle::shear_rotate(d, {{0.0, 0.0}, {0.5, M_PI / 2.0}});
  for (int n : {20, 40, 80, 160}) {
    IntegratedExponent r = integrated_exponent(kRotation, shear, 1, n);
    CHECK(r.exact);
    CHECK(r.value <= r.at_half + 1e-9);       // a_{2m}/2m <= a_m/m
    CHECK(r.at_half <= r.at_quarter + 1e-9);
  }
}

TEST_CASE("monte carlo integration reports an error bar") {
  Cocycle c = Cocycle::schrodinger(3.0, Potential::cosine(0.3));
  IntegratedExponent r = integrated_exponent(kRotation, c, 1, 400, 16, 99);
  CHECK_FALSE(r.exact);
  CHECK(r.samples == 16);
  CHECK(r.std_error > 0.0);
  CHECK(r.std_error < 0.1);
  CHECK(r.value > 0.5);  // hyperbolic regime stays strongly expanding
  CHECK(r.value < 1.5);
  // Deterministic for a fixed seed.
  IntegratedExponent r2 = integrated_exponent(kRotation, c, 1, 400, 16, 99);
  CHECK(r.value == r2.value);
  CHECK(r.std_error == r2.std_error);
}

TEST_CASE("oseledets splitting of a diagonal cocycle is the axes") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 2.0, 1.0, 0.5;
  Cocycle c = Cocycle::constant_cocycle(d, GroupTag::SpecialLinear);
  OseledetsApprox approx = oseledets_splitting(kRotation, c, zero_state(), 200);
  REQUIRE(approx.grouped.size() == 3);
  CHECK(approx.grouped[0] == doctest::Approx(std::log(2.0)).epsilon(1e-10));
  CHECK(approx.grouped[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
  CHECK(approx.grouped[2] == doctest::Approx(-std::log(2.0)).epsilon(1e-10));
  CHECK(approx.multiplicities == std::vector<int>{1, 1, 1});
  for (int i = 0; i < 3; ++i) {
    Vector axis = Vector::Zero(3);
    axis[i] = 1.0;
    CHECK(principal_angle(approx.splitting.parts[static_cast<std::size_t>(i)],
                          Subspace::span(axis)) <= 1e-9);
  }
}

TEST_CASE("oseledets splitting of an isometry is trivial") {
  Cocycle rot =
      Cocycle::constant_cocycle(plane_rotation(2, 0, 1, 0.7), GroupTag::SpecialLinear);
  OseledetsApprox approx = oseledets_splitting(kRotation, rot, zero_state(), 150);
  CHECK(approx.grouped.size() == 1);
  CHECK(approx.multiplicities == std::vector<int>{2});
  CHECK(approx.splitting.parts[0].dim() == 2);
}

TEST_CASE("oseledets spaces of a conjugated cocycle are the conjugate axes") {
  Rng rng(404);
  Matrix d(2, 2);
  d << 2.0, 0.0, 0.0, 0.5;
  for (int trial = 0; trial < 5; ++trial) {
    Matrix s = random_sl(rng, 2);
    Cocycle c = Cocycle::constant_cocycle(s * d * s.inverse());
    OseledetsApprox approx =
        oseledets_splitting(kRotation, c, zero_state(), 20000);
    REQUIRE(approx.grouped.size() == 2);
    CHECK(approx.grouped[0] == doctest::Approx(std::log(2.0)).epsilon(1e-3));
    for (int i = 0; i < 2; ++i) {
      Subspace expected = Subspace::span(s.col(i));
      CHECK(principal_angle(approx.splitting.parts[static_cast<std::size_t>(i)],
                            expected) <= 1e-6);
    }
  }
}

TEST_CASE("equal exponents cluster into one multiplicity-2 block") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 2.0, 2.0, 0.25;
  Cocycle c = Cocycle::constant_cocycle(d, GroupTag::SpecialLinear);
  OseledetsApprox approx = oseledets_splitting(kRotation, c, zero_state(), 150);
  REQUIRE(approx.grouped.size() == 2);
  CHECK(approx.multiplicities == std::vector<int>{2, 1});
  CHECK(approx.grouped[0] == doctest::Approx(std::log(2.0)).epsilon(1e-10));
  CHECK(approx.grouped[1] == doctest::Approx(std::log(0.25)).epsilon(1e-10));
  Matrix plane(3, 2);
  plane << 1.0, 0.0, 0.0, 1.0, 0.0, 0.0;
  CHECK(projector_distance(approx.splitting.parts[0], Subspace::span(plane)) <=
        1e-9);
  // Grouped exponents separate by more than the tolerance used.
  CHECK(approx.grouped[0] - approx.grouped[1] > approx.cluster_tol);
  int total = 0;
  for (int m : approx.multiplicities) total += m;
  CHECK(total == 3);
}

TEST_CASE("sub-tolerance gaps raise unresolved multiplicity") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 2.0 * (1.0 + 5e-14), 2.0, 0.25;
  Cocycle c = Cocycle::constant_cocycle(d);
  CHECK_THROWS_WITH_AS(oseledets_splitting(kRotation, c, zero_state(), 150, 0.0),
                       "unresolved multiplicity", std::runtime_error);
}

TEST_CASE("exterior power consistency of integrated exponents") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 3.0, 2.0, 1.0;
  d *= std::pow(6.0, -1.0 / 3.0);
  Cocycle c = Cocycle::constant_cocycle(d, GroupTag::SpecialLinear);
  auto [direct, wedge] = exterior_consistency(kRotation, c, zero_state(), 2, 1000);
  double want = std::log(6.0) / 3.0;
  CHECK(direct == doctest::Approx(want).epsilon(1e-12));
  CHECK(wedge == doctest::Approx(want).epsilon(1e-12));

  Cocycle rot =
      Cocycle::constant_cocycle(plane_rotation(2, 0, 1, 1.1), GroupTag::SpecialLinear);
  auto [r1, r2] = exterior_consistency(kRotation, rot, zero_state(), 1, 1000);
  CHECK(std::abs(r1) <= 1e-9);
  CHECK(std::abs(r2) <= 1e-9);
}

TEST_CASE("exterior consistency against the eigenvalue oracle") {
  Rng rng(2024);
  for (int trial = 0; trial < 3; ++trial) {
    Matrix m = random_sl(rng, 3);
    Cocycle c = Cocycle::constant_cocycle(m, GroupTag::SpecialLinear);
    auto [direct, wedge] = exterior_consistency(kRotation, c, zero_state(), 2, 30000);
    std::vector<double> lam = log_eigen_moduli(m);
    double want = -lam[2];  // lambda_1 + lambda_2 = -lambda_3 in SL(3)
    CHECK(direct == doctest::Approx(want).epsilon(1e-3).scale(1.0));
    CHECK(wedge == doctest::Approx(want).epsilon(1e-3).scale(1.0));
    CHECK(std::abs(direct - wedge) <= 1e-3);
  }
}

TEST_CASE("angles between Oseledets sums neither decay nor grow") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 2.0, 1.0, 0.5;
  Cocycle diag = Cocycle::constant_cocycle(d, GroupTag::SpecialLinear);
  for (double rate : angle_decay_rate(kRotation, diag, zero_state(), 1000))
    CHECK(std::abs(rate) <= 1e-12);

  Rng rng(8);
  Matrix s = random_sl(rng, 2);
  Matrix d2(2, 2);
  d2 << 2.0, 0.0, 0.0, 0.5;
  Cocycle conj = Cocycle::constant_cocycle(s * d2 * s.inverse());
  for (double rate : angle_decay_rate(kRotation, conj, zero_state(), 10000))
    CHECK(std::abs(rate) <= 1e-3);

  Cocycle schro = Cocycle::schrodinger(3.0, Potential::zero());
  for (double rate : angle_decay_rate(kRotation, schro, zero_state(), 10000))
    CHECK(std::abs(rate) <= 1e-6);
}
