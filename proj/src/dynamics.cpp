#include "cocycle/dynamics.hpp"

#include "cocycle/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cocycle {

namespace {

double wrap_unit(double x) {
  double y = x - std::floor(x);
  if (y >= 1.0) y = 0.0;
  return y;
}

double clamp_exponent(double t) {
  return std::min(700.0, std::max(-700.0, t));
}

}  // namespace

// ---------------------------------------------------------------------------
// BaseSystem
// ---------------------------------------------------------------------------

BaseSystem BaseSystem::circle_rotation(double alpha) {
  BaseSystem s;
  s.kind = Kind::CircleRotation;
  s.alpha = alpha;
  return s;
}

BaseSystem BaseSystem::torus_translation(const Vector& v) {
  if (v.size() == 0) throw std::invalid_argument("degenerate");
  BaseSystem s;
  s.kind = Kind::TorusTranslation;
  s.translation = v;
  return s;
}

BaseSystem BaseSystem::cat_map() {
  BaseSystem s;
  s.kind = Kind::CatMap;
  return s;
}

BaseSystem BaseSystem::symbolic(std::vector<double> states) {
  if (states.empty()) throw std::invalid_argument("degenerate");
  BaseSystem s;
  s.kind = Kind::Symbolic;
  s.sequence = std::move(states);
  return s;
}

int BaseSystem::state_dim() const {
  switch (kind) {
    case Kind::CircleRotation: return 1;
    case Kind::TorusTranslation: return static_cast<int>(translation.size());
    case Kind::CatMap: return 2;
    case Kind::Symbolic: return 1;
  }
  return 1;
}

double BaseSystem::observable(const Vector& x) const {
  if (kind == Kind::Symbolic) {
    long idx = std::lround(x[0]);
    long n = static_cast<long>(sequence.size());
    idx = ((idx % n) + n) % n;
    return sequence[static_cast<std::size_t>(idx)];
  }
  return x[0];
}

Vector step(const BaseSystem& system, const Vector& x) {
  switch (system.kind) {
    case BaseSystem::Kind::CircleRotation: {
      Vector y(1);
      y[0] = wrap_unit(x[0] + system.alpha);
      return y;
    }
    case BaseSystem::Kind::TorusTranslation: {
      Vector y = x + system.translation;
      for (int i = 0; i < y.size(); ++i) y[i] = wrap_unit(y[i]);
      return y;
    }
    case BaseSystem::Kind::CatMap: {
      Vector y(2);
      y[0] = wrap_unit(2.0 * x[0] + x[1]);
      y[1] = wrap_unit(x[0] + x[1]);
      return y;
    }
    case BaseSystem::Kind::Symbolic: {
      long n = static_cast<long>(system.sequence.size());
      long idx = (std::lround(x[0]) + 1) % n;
      Vector y(1);
      y[0] = static_cast<double>(idx);
      return y;
    }
  }
  throw std::logic_error("unknown base system");
}

Vector step_back(const BaseSystem& system, const Vector& x) {
  switch (system.kind) {
    case BaseSystem::Kind::CircleRotation: {
      Vector y(1);
      y[0] = wrap_unit(x[0] - system.alpha);
      return y;
    }
    case BaseSystem::Kind::TorusTranslation: {
      Vector y = x - system.translation;
      for (int i = 0; i < y.size(); ++i) y[i] = wrap_unit(y[i]);
      return y;
    }
    case BaseSystem::Kind::CatMap: {
      Vector y(2);
      y[0] = wrap_unit(x[0] - x[1]);
      y[1] = wrap_unit(-x[0] + 2.0 * x[1]);
      return y;
    }
    case BaseSystem::Kind::Symbolic: {
      long n = static_cast<long>(system.sequence.size());
      long idx = ((std::lround(x[0]) - 1) % n + n) % n;
      Vector y(1);
      y[0] = static_cast<double>(idx);
      return y;
    }
  }
  throw std::logic_error("unknown base system");
}

Vector random_state(const BaseSystem& system, Rng& rng) {
  Vector x(system.state_dim());
  if (system.kind == BaseSystem::Kind::Symbolic) {
    x[0] = std::floor(rng.uniform() *
                      static_cast<double>(system.sequence.size()));
    return x;
  }
  for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform();
  return x;
}

// ---------------------------------------------------------------------------
// Potential
// ---------------------------------------------------------------------------

Potential Potential::zero() { return Potential{}; }

Potential Potential::cosine(double lambda) {
  Potential p;
  p.kind = Kind::Cosine;
  p.lambda = lambda;
  return p;
}

Potential Potential::table(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("degenerate");
  Potential p;
  p.kind = Kind::Table;
  p.samples = std::move(samples);
  return p;
}

double Potential::operator()(double theta) const {
  switch (kind) {
    case Kind::Zero:
      return 0.0;
    case Kind::Cosine:
      return 2.0 * lambda * std::cos(2.0 * M_PI * theta);
    case Kind::Table: {
      double u = wrap_unit(theta);
      double pos = u * static_cast<double>(samples.size());
      std::size_t i0 = static_cast<std::size_t>(pos) % samples.size();
      std::size_t i1 = (i0 + 1) % samples.size();
      double frac = pos - std::floor(pos);
      return samples[i0] * (1.0 - frac) + samples[i1] * frac;
    }
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Cocycle
// ---------------------------------------------------------------------------

Matrix schrodinger_matrix(double energy, const Potential& v, double theta) {
  Matrix m(2, 2);
  m << energy - v(theta), -1.0, 1.0, 0.0;
  return m;
}

Cocycle Cocycle::constant_cocycle(const Matrix& m, GroupTag tag) {
  SquareMatrix checked(m, tag);  // validates invertibility and group residual
  Cocycle c;
  c.kind = Kind::Constant;
  c.dim = static_cast<int>(m.rows());
  c.group_tag = tag;
  c.constant = checked.entries;
  return c;
}

Cocycle Cocycle::schrodinger(double energy, Potential v) {
  Cocycle c;
  c.kind = Kind::Schrodinger;
  c.dim = 2;
  c.group_tag = GroupTag::SpecialLinear;
  c.energy = energy;
  c.potential = std::move(v);
  return c;
}

Cocycle Cocycle::shear_rotate(const Matrix& diag,
                              std::vector<std::pair<double, double>> steps) {
  if (diag.rows() != 2 || diag.cols() != 2 || steps.empty())
    throw std::invalid_argument("degenerate");
  Cocycle c;
  c.kind = Kind::ShearRotate;
  c.dim = 2;
  c.group_tag = std::abs(diag.determinant() - 1.0) <= 1e-9
                    ? GroupTag::SpecialLinear
                    : GroupTag::GeneralLinear;
  c.shear_diag = diag;
  std::sort(steps.begin(), steps.end());
  c.theta_steps = std::move(steps);
  return c;
}

Cocycle Cocycle::from_table(std::vector<Matrix> entries, GroupTag tag) {
  if (entries.empty()) throw std::invalid_argument("degenerate");
  Cocycle c;
  c.kind = Kind::Table;
  c.dim = static_cast<int>(entries.front().rows());
  c.group_tag = tag;
  for (const Matrix& m : entries) {
    if (m.rows() != c.dim || m.cols() != c.dim)
      throw std::invalid_argument("degenerate");
  }
  c.table = std::move(entries);
  return c;
}

namespace {

double step_angle(const std::vector<std::pair<double, double>>& steps,
                  double x) {
  double u = wrap_unit(x);
  // Value of the interval containing u; intervals wrap around the circle, so
  // points before the first breakpoint take the last breakpoint's value.
  double value = steps.back().second;
  for (const auto& [b, v] : steps) {
    if (b <= u)
      value = v;
    else
      break;
  }
  return value;
}

}  // namespace

Matrix Cocycle::matrix_at(const BaseSystem& system, const Vector& x) const {
  switch (kind) {
    case Kind::Constant:
      return constant;
    case Kind::Schrodinger:
      return schrodinger_matrix(energy, potential, system.observable(x));
    case Kind::ShearRotate: {
      double theta = step_angle(theta_steps, system.observable(x));
      return plane_rotation(2, 0, 1, theta) * shear_diag;
    }
    case Kind::Table: {
      long n = static_cast<long>(table.size());
      long idx;
      if (system.kind == BaseSystem::Kind::Symbolic) {
        idx = ((std::lround(x[0]) % n) + n) % n;
      } else {
        idx = static_cast<long>(wrap_unit(system.observable(x)) *
                                static_cast<double>(n));
        idx = std::min(idx, n - 1);
      }
      return table[static_cast<std::size_t>(idx)];
    }
  }
  throw std::logic_error("unknown cocycle");
}

std::pair<double, double> Cocycle::norm_bounds() const {
  auto pair_of = [](const Matrix& m) {
    return std::make_pair(opnorm(m), 1.0 / conorm(m));
  };
  switch (kind) {
    case Kind::Constant:
      return pair_of(constant);
    case Kind::Table: {
      double fwd = 0.0, inv = 0.0;
      for (const Matrix& m : table) {
        auto [f, b] = pair_of(m);
        fwd = std::max(fwd, f);
        inv = std::max(inv, b);
      }
      return {fwd, inv};
    }
    case Kind::Schrodinger: {
      double fwd = 0.0, inv = 0.0;
      for (int i = 0; i < 1024; ++i) {
        double theta = static_cast<double>(i) / 1024.0;
        auto [f, b] = pair_of(schrodinger_matrix(energy, potential, theta));
        fwd = std::max(fwd, f);
        inv = std::max(inv, b);
      }
      return {fwd, inv};
    }
    case Kind::ShearRotate:
      return pair_of(shear_diag);  // the rotation factor is an isometry
  }
  throw std::logic_error("unknown cocycle");
}

// ---------------------------------------------------------------------------
// OrbitSegment
// ---------------------------------------------------------------------------

Matrix Factored::recompose() const {
  return q * logdiag.array().exp().matrix().asDiagonal() * runit;
}

namespace {

Factored advance_prefix(const Factored& prev, const Matrix& a) {
  const int d = static_cast<int>(a.rows());
  Matrix q, s;
  signed_qr(a * prev.q, q, s);
  Factored next;
  next.q = q;
  next.logdiag = prev.logdiag;
  Matrix u = Matrix::Identity(d, d);
  for (int i = 0; i < d; ++i) {
    if (!(s(i, i) > 1e-300))
      throw std::runtime_error("non-invertible");
    next.logdiag[i] += std::log(s(i, i));
    for (int k = i + 1; k < d; ++k) {
      double expo = clamp_exponent(prev.logdiag[k] - prev.logdiag[i]);
      u(i, k) = s(i, k) / s(i, i) * std::exp(expo);
    }
  }
  next.runit = u * prev.runit;
  // Keep the factor exactly unit upper triangular against rounding drift.
  for (int i = 0; i < d; ++i) {
    next.runit(i, i) = 1.0;
    for (int k = 0; k < i; ++k) next.runit(i, k) = 0.0;
  }
  return next;
}

}  // namespace

ProductAccumulator::ProductAccumulator(int dim) {
  if (dim < 1) throw std::invalid_argument("degenerate");
  value.q = Matrix::Identity(dim, dim);
  value.logdiag = Vector::Zero(dim);
  value.runit = Matrix::Identity(dim, dim);
}

void ProductAccumulator::push(const Matrix& a) {
  value = advance_prefix(value, a);
}

std::pair<Matrix, double> ProductAccumulator::scaled() const {
  double gmax = value.logdiag.maxCoeff();
  Matrix y = value.runit;
  for (int i = 0; i < y.rows(); ++i)
    y.row(i) *= std::exp(clamp_exponent(value.logdiag[i] - gmax));
  return {value.q * y, gmax};
}

OrbitSegment orbit_segment(const BaseSystem& system, const Cocycle& cocycle,
                           const Vector& x, int n) {
  if (n < 0 || x.size() != system.state_dim())
    throw std::invalid_argument("degenerate");
  OrbitSegment orbit;
  orbit.system = system;
  orbit.cocycle = cocycle;
  orbit.states.reserve(static_cast<std::size_t>(n) + 1);
  orbit.matrices.reserve(static_cast<std::size_t>(n));
  orbit.prefixes.reserve(static_cast<std::size_t>(n) + 1);

  const int d = cocycle.dim;
  ProductAccumulator acc(d);
  orbit.prefixes.push_back(acc.value);

  Vector state = x;
  orbit.states.push_back(state);
  for (int j = 0; j < n; ++j) {
    Matrix a = cocycle.matrix_at(system, state);
    if (!a.allFinite())
      throw std::runtime_error("group violation at step " + std::to_string(j));
    double residual = group_residual(a, cocycle.group_tag);
    if (residual > 1e-9) {
      if (cocycle.group_tag == GroupTag::SpecialLinear && residual <= 1e-6) {
        a = special_linear_reproject(a);
        ++orbit.reprojections;
      } else {
        throw std::runtime_error("group violation at step " +
                                 std::to_string(j));
      }
    }
    orbit.matrices.push_back(a);
    acc.push(a);
    orbit.prefixes.push_back(acc.value);
    state = step(system, state);
    orbit.states.push_back(state);
  }
  return orbit;
}

std::pair<Matrix, double> OrbitSegment::window_scaled(int k, int l) const {
  if (k < 0 || l < k || l > length())
    throw std::invalid_argument("degenerate");
  const int d = dim();
  if (k == l) return {Matrix::Identity(d, d), 0.0};
  const Factored& fk = prefixes[static_cast<std::size_t>(k)];
  const Factored& fl = prefixes[static_cast<std::size_t>(l)];
  Matrix rk_inv = fk.runit.triangularView<Eigen::Upper>().solve(
      Matrix::Identity(d, d));
  Matrix x = fl.runit * rk_inv;
  double c = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double mag = std::abs(x(i, j));
      if (mag < 1e-300) continue;
      c = std::max(c, fl.logdiag[i] - fk.logdiag[j] + std::log(mag));
    }
  }
  if (!std::isfinite(c)) throw std::runtime_error("non-invertible");
  Matrix w(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double expo = clamp_exponent(fl.logdiag[i] - fk.logdiag[j] - c);
      w(i, j) = x(i, j) * std::exp(expo);
    }
  }
  return {fl.q * w * fk.q.transpose(), c};
}

Matrix OrbitSegment::window(int k, int l) const {
  auto [w, c] = window_scaled(k, l);
  if (c > 700.0) throw std::runtime_error("window overflow");
  return std::exp(c) * w;
}

namespace {

// Scales y_i by exp(logdiag_i) relative to the dominant surviving entry, so
// the direction of diag(exp(logdiag)) * y is preserved even when the raw
// exponents span hundreds of orders of magnitude.
Vector scale_by_logs(const Vector& logdiag, const Vector& y) {
  double c = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0) c = std::max(c, logdiag[i] + std::log(std::abs(y[i])));
  }
  if (!std::isfinite(c)) throw std::invalid_argument("degenerate");
  Vector w(y.size());
  for (int i = 0; i < y.size(); ++i) {
    w[i] = y[i] == 0.0 ? 0.0
                       : std::copysign(std::exp(clamp_exponent(
                                           logdiag[i] +
                                           std::log(std::abs(y[i])) - c)),
                                       y[i]);
  }
  return w;
}

}  // namespace

Vector OrbitSegment::apply_direction(int j, const Vector& v) const {
  if (j < 0 || j > length() || v.size() != dim())
    throw std::invalid_argument("degenerate");
  const Factored& f = prefixes[static_cast<std::size_t>(j)];
  Vector w = f.q * scale_by_logs(f.logdiag, f.runit * v);
  double n = w.norm();
  if (!(n > 1e-300)) throw std::invalid_argument("degenerate");
  return w / n;
}

Vector OrbitSegment::solve_direction(int j, const Vector& v) const {
  if (j < 0 || j > length() || v.size() != dim())
    throw std::invalid_argument("degenerate");
  const Factored& f = prefixes[static_cast<std::size_t>(j)];
  Vector y = f.q.transpose() * v;
  double gmin = f.logdiag.minCoeff();
  for (int i = 0; i < y.size(); ++i)
    y[i] *= std::exp(clamp_exponent(gmin - f.logdiag[i]));
  Vector w = f.runit.triangularView<Eigen::Upper>().solve(y);
  double n = w.norm();
  if (!(n > 1e-300)) throw std::invalid_argument("degenerate");
  return w / n;
}

Subspace OrbitSegment::propagate(const Subspace& e, int j) const {
  if (j < 0 || j > length() || e.basis.rows() != dim())
    throw std::invalid_argument("degenerate");
  const Factored& f = prefixes[static_cast<std::size_t>(j)];
  Matrix y = f.runit * e.basis;
  for (int c = 0; c < y.cols(); ++c)
    y.col(c) = scale_by_logs(f.logdiag, y.col(c));
  return Subspace::span(f.q * y);
}

}  // namespace cocycle
