#include "cocycle/lyapunov.hpp"

#include "cocycle/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace cocycle {

namespace {

// Discrete QR core over an arbitrary matrix stream.
LyapunovEstimate qr_stream(int d, int n, int cadence,
                           const std::function<Matrix()>& next) {
  if (d < 1 || n < cadence || cadence < 1)
    throw std::invalid_argument("degenerate");
  Matrix frame = Matrix::Identity(d, d);
  Vector logs = Vector::Zero(d);
  Matrix window = frame;
  int since = 0;
  const int tail_from = n - n / 10;
  Vector tail_min = Vector::Constant(d, std::numeric_limits<double>::infinity());
  Vector tail_max = Vector::Constant(d, -std::numeric_limits<double>::infinity());
  bool tail_seen = false;

  auto flush = [&](int steps_done) {
    Matrix q, r;
    signed_qr(window, q, r);
    for (int i = 0; i < d; ++i) {
      if (!(r(i, i) > 0.0)) throw std::runtime_error("cadence too large");
      logs[i] += std::log(r(i, i));
    }
    frame = q;
    window = frame;
    since = 0;
    if (steps_done >= tail_from) {
      tail_seen = true;
      for (int i = 0; i < d; ++i) {
        double est = logs[i] / steps_done;
        tail_min[i] = std::min(tail_min[i], est);
        tail_max[i] = std::max(tail_max[i], est);
      }
    }
  };

  for (int j = 0; j < n; ++j) {
    window = next() * window;
    if (!window.allFinite() || window.norm() > 1e290)
      throw std::runtime_error("cadence too large");
    if (++since == cadence) flush(j + 1);
  }
  if (since > 0) flush(n);

  LyapunovEstimate est;
  est.exponents = logs / static_cast<double>(n);
  std::sort(est.exponents.data(), est.exponents.data() + d,
            std::greater<double>());
  est.horizon = n;
  est.cadence = cadence;
  est.tail_drift = tail_seen ? (tail_max - tail_min).maxCoeff() : 0.0;
  return est;
}

std::function<Matrix()> cocycle_stream(const BaseSystem& system,
                                       const Cocycle& cocycle, Vector state) {
  return [&system, &cocycle, state]() mutable {
    Matrix a = cocycle.matrix_at(system, state);
    state = step(system, state);
    return a;
  };
}

// log ||wedge^p M|| for a matrix given as (normalized part, log scale).
double log_wedge_norm(const Matrix& w, double scale, int p) {
  Eigen::JacobiSVD<Matrix> svd(w);
  double out = p * scale;
  for (int i = 0; i < p; ++i)
    out += std::log(std::max(svd.singularValues()[i], 1e-300));
  return out;
}

}  // namespace

LyapunovEstimate qr_spectrum(const BaseSystem& system, const Cocycle& cocycle,
                             const Vector& x, int n, int cadence) {
  if (x.size() != system.state_dim()) throw std::invalid_argument("degenerate");
  return qr_stream(cocycle.dim, n, cadence, cocycle_stream(system, cocycle, x));
}

// ---------------------------------------------------------------------------
// Integrated exponents
// ---------------------------------------------------------------------------

namespace {

struct Cell {
  Vector start;
  double weight;
};

// Start-point cells on which x -> A^n(x) is constant, when the cocycle is
// piecewise constant in the state; empty when no exact decomposition exists.
std::vector<Cell> exact_cells(const BaseSystem& system, const Cocycle& cocycle,
                              int n) {
  std::vector<Cell> cells;
  if (cocycle.kind == Cocycle::Kind::Constant) {
    Cell c;
    c.start = Vector::Zero(system.state_dim());
    c.weight = 1.0;
    cells.push_back(c);
    return cells;
  }
  if (system.kind == BaseSystem::Kind::Symbolic &&
      cocycle.kind == Cocycle::Kind::Table) {
    const int len = static_cast<int>(system.sequence.size());
    for (int i = 0; i < len; ++i) {
      Cell c;
      c.start = Vector::Constant(1, static_cast<double>(i));
      c.weight = 1.0 / len;
      cells.push_back(c);
    }
    return cells;
  }
  if (system.kind == BaseSystem::Kind::CircleRotation &&
      (cocycle.kind == Cocycle::Kind::ShearRotate ||
       cocycle.kind == Cocycle::Kind::Table)) {
    std::vector<double> base_points;
    if (cocycle.kind == Cocycle::Kind::ShearRotate) {
      for (const auto& [b, v] : cocycle.theta_steps) base_points.push_back(b);
    } else {
      const int len = static_cast<int>(cocycle.table.size());
      for (int i = 0; i < len; ++i)
        base_points.push_back(static_cast<double>(i) / len);
    }
    std::vector<double> cuts;
    for (int j = 0; j < n; ++j) {
      for (double b : base_points) {
        double c = std::fmod(b - j * system.alpha, 1.0);
        if (c < 0) c += 1.0;
        cuts.push_back(c);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [](double a, double b) { return b - a < 1e-13; }),
               cuts.end());
    if (cuts.empty()) cuts.push_back(0.0);
    for (std::size_t i = 0; i < cuts.size(); ++i) {
      double lo = cuts[i];
      double hi = i + 1 < cuts.size() ? cuts[i + 1] : cuts.front() + 1.0;
      Cell c;
      c.start = Vector::Constant(1, std::fmod((lo + hi) / 2.0, 1.0));
      c.weight = hi - lo;
      cells.push_back(c);
    }
    return cells;
  }
  return cells;
}

}  // namespace

IntegratedExponent integrated_exponent(const BaseSystem& system,
                                       const Cocycle& cocycle, int p, int n,
                                       int samples, std::uint64_t seed) {
  const int d = cocycle.dim;
  if (p < 1 || p > d - 1 || n < 4 || samples < 1)
    throw std::invalid_argument("degenerate");
  const int n_half = n / 2;
  const int n_quarter = n / 4;

  auto orbit_values = [&](const Vector& x) {
    OrbitSegment orbit = orbit_segment(system, cocycle, x, n);
    std::array<double, 3> vals{};
    const int horizons[3] = {n, n_half, n_quarter};
    for (int t = 0; t < 3; ++t) {
      auto [w, s] = orbit.window_scaled(0, horizons[t]);
      vals[static_cast<std::size_t>(t)] =
          log_wedge_norm(w, s, p) / horizons[t];
    }
    return vals;
  };

  IntegratedExponent out;
  out.horizon = n;

  std::vector<Cell> cells = exact_cells(system, cocycle, n);
  if (!cells.empty()) {
    out.exact = true;
    out.samples = static_cast<int>(cells.size());
    for (const Cell& c : cells) {
      auto vals = orbit_values(c.start);
      out.value += c.weight * vals[0];
      out.at_half += c.weight * vals[1];
      out.at_quarter += c.weight * vals[2];
    }
    return out;
  }

  out.samples = samples;
  std::vector<std::array<double, 3>> vals(static_cast<std::size_t>(samples));
  parallel_for(static_cast<std::size_t>(samples), [&](std::size_t k) {
    Rng rng(Rng::derive(seed, k));
    vals[k] = orbit_values(random_state(system, rng));
  });
  double sum = 0.0, sumsq = 0.0;
  for (const auto& v : vals) {
    sum += v[0];
    sumsq += v[0] * v[0];
    out.at_half += v[1];
    out.at_quarter += v[2];
  }
  out.value = sum / samples;
  out.at_half /= samples;
  out.at_quarter /= samples;
  if (samples > 1) {
    double var = (sumsq - sum * sum / samples) / (samples - 1);
    out.std_error = std::sqrt(std::max(var, 0.0) / samples);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Oseledets splittings
// ---------------------------------------------------------------------------

OseledetsApprox oseledets_splitting(const BaseSystem& system,
                                    const Cocycle& cocycle, const Vector& x,
                                    int horizon, double cluster_tol) {
  if (horizon < 100) throw std::invalid_argument("degenerate");
  const int d = cocycle.dim;
  LyapunovEstimate est = qr_spectrum(system, cocycle, x, horizon, 10);
  const double tol =
      cluster_tol >= 0.0 ? cluster_tol : std::max(1e-8, 10.0 * est.tail_drift);

  // Cluster sorted exponents; check boundary gaps are resolvable.
  std::vector<double> grouped;
  std::vector<int> mult;
  grouped.push_back(est.exponents[0]);
  mult.push_back(1);
  for (int i = 1; i < d; ++i) {
    double gap = est.exponents[i - 1] - est.exponents[i];
    if (gap > tol) {
      if (gap < 1e-12) throw std::runtime_error("unresolved multiplicity");
      grouped.push_back(est.exponents[i]);
      mult.push_back(1);
    } else {
      // Accumulate the running mean of the cluster.
      int m = mult.back();
      grouped.back() = (grouped.back() * m + est.exponents[i]) / (m + 1);
      mult.back() = m + 1;
    }
  }
  const int k = static_cast<int>(grouped.size());

  if (k == 1) {
    std::vector<Subspace> whole{Subspace::span(Matrix::Identity(d, d))};
    return OseledetsApprox(Splitting(std::move(whole)), std::move(grouped),
                           std::move(mult), tol);
  }

  // Flags converge geometrically at the smallest cluster gap, so a modest
  // sub-horizon suffices and keeps the flag products cheap.
  double resolve_gap = grouped[0] - grouped[1];
  for (int s = 2; s < k; ++s)
    resolve_gap = std::min(resolve_gap, grouped[s - 1] - grouped[s]);
  resolve_gap = std::max(resolve_gap, 1e-12);
  int h_flag = std::min<long long>(
      horizon, std::max<long long>(100, static_cast<long long>(300.0 / resolve_gap)));

  // Growth filtrations are read off the factored products: with
  // A^h = Q e^G R (R unit upper triangular), a direction grows at most like
  // the j-th rate exactly when its top j coordinates in R vanish, so the slow
  // flag is R^{-1} applied to the trailing coordinate axes. The triangular
  // factor stays well conditioned even when e^G spans hundreds of decades,
  // where any dense product would have lost the slow directions to rounding.
  auto forward = cocycle_stream(system, cocycle, x);
  ProductAccumulator fwd(d);
  for (int j = 0; j < h_flag; ++j) fwd.push(forward());

  ProductAccumulator bwd(d);
  Vector state = x;
  for (int j = 0; j < h_flag; ++j) {
    state = step_back(system, state);
    bwd.push(cocycle.matrix_at(system, state).inverse());
  }

  auto slow_flag = [d](const Factored& f, int slow_dim) {
    // The top flag member is the whole space; computing it through the
    // triangular factor would mix columns whose scales differ by the full
    // window spread.
    if (slow_dim == d) return Subspace::span(Matrix::Identity(d, d));
    std::vector<int> order(static_cast<std::size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&f](int a, int b) { return f.logdiag[a] > f.logdiag[b]; });
    Matrix targets = Matrix::Zero(d, slow_dim);
    for (int t = 0; t < slow_dim; ++t)
      targets(order[static_cast<std::size_t>(d - slow_dim + t)], t) = 1.0;
    Matrix basis = f.runit.triangularView<Eigen::Upper>().solve(targets);
    for (int c = 0; c < slow_dim; ++c) {
      const double nc = basis.col(c).norm();
      if (nc > 0.0) basis.col(c) /= nc;
    }
    return Subspace::span(basis);
  };

  std::vector<Subspace> parts;
  int offset = 0;
  for (int s = 0; s < k; ++s) {
    const int m = mult[static_cast<std::size_t>(s)];
    // Forward slow flag: directions growing at most as fast as cluster s.
    Subspace f_flag = slow_flag(fwd.value, d - offset);
    // Slow flag of the backward product: directions contracting backward at
    // least as fast as cluster s, i.e. the sum of the clusters down to s.
    Subspace g_flag = slow_flag(bwd.value, offset + m);
    Matrix basis = intersect(f_flag, g_flag, 1e-6);
    if (static_cast<int>(basis.cols()) != m)
      throw std::runtime_error("unresolved multiplicity");
    parts.push_back(Subspace::span(basis));
    offset += m;
  }
  return OseledetsApprox(Splitting(std::move(parts)), std::move(grouped),
                         std::move(mult), tol);
}

std::pair<double, double> exterior_consistency(const BaseSystem& system,
                                               const Cocycle& cocycle,
                                               const Vector& x, int p,
                                               int horizon) {
  const int d = cocycle.dim;
  if (p < 1 || p > d - 1) throw std::invalid_argument("degenerate");
  LyapunovEstimate direct = qr_spectrum(system, cocycle, x, horizon, 10);
  double lambda_p = 0.0;
  for (int i = 0; i < p; ++i) lambda_p += direct.exponents[i];

  auto base = cocycle_stream(system, cocycle, x);
  auto wedge_stream = [&base, p]() { return exterior_power(base(), p); };
  const int wedge_dim =
      static_cast<int>(lex_index_sets(d, p).size());
  LyapunovEstimate wedge = qr_stream(wedge_dim, horizon, 10, wedge_stream);
  return {lambda_p, wedge.exponents[0]};
}

namespace {

// sin of the angle between the sum of the first s parts and the sum of the
// rest.
double split_angle_sin(const OseledetsApprox& approx, int s) {
  const int k = static_cast<int>(approx.grouped.size());
  Subspace fast = approx.splitting.parts[0];
  for (int i = 1; i < s; ++i)
    fast = direct_sum(fast, approx.splitting.parts[static_cast<std::size_t>(i)]);
  Subspace slow = approx.splitting.parts[static_cast<std::size_t>(s)];
  for (int i = s + 1; i < k; ++i)
    slow = direct_sum(slow, approx.splitting.parts[static_cast<std::size_t>(i)]);
  return std::sin(principal_angle(fast, slow));
}

}  // namespace

std::vector<double> angle_decay_rate(const BaseSystem& system,
                                     const Cocycle& cocycle, const Vector& x,
                                     int horizon) {
  // Recomputing the splitting at the endpoint is stable, unlike pushing
  // contracting subspaces forward through the cocycle, and measures the same
  // angle because the Oseledets family is invariant.
  OseledetsApprox at_start =
      oseledets_splitting(system, cocycle, x, horizon, -1.0);
  Vector y = x;
  for (int j = 0; j < horizon; ++j) y = step(system, y);
  OseledetsApprox at_end =
      oseledets_splitting(system, cocycle, y, horizon, -1.0);
  if (at_end.grouped.size() != at_start.grouped.size() ||
      at_end.multiplicities != at_start.multiplicities)
    throw std::runtime_error("unresolved multiplicity");

  const int k = static_cast<int>(at_start.grouped.size());
  std::vector<double> rates;
  for (int s = 1; s < k; ++s) {
    double sin0 = split_angle_sin(at_start, s);
    double sin_n = split_angle_sin(at_end, s);
    rates.push_back((std::log(std::max(sin_n, 1e-300)) -
                     std::log(std::max(sin0, 1e-300))) /
                    horizon);
  }
  return rates;
}

}  // namespace cocycle
