#include "cocycle/domination.hpp"

#include "cocycle/util.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cocycle {

namespace {

struct PropagatedPair {
  std::vector<Subspace> e;
  std::vector<Subspace> f;
  double min_angle = 0.0;
};

// E_n = A^n(E), F_n = A^n(F) for n = 0..count, re-orthonormalized each step.
PropagatedPair propagate_pair(const OrbitSegment& orbit, const Subspace& e0,
                              const Subspace& f0, int count) {
  const int d = orbit.dim();
  if (e0.ambient_dim() != d || f0.ambient_dim() != d ||
      e0.dim() + f0.dim() != d || count < 0 || count > orbit.length())
    throw std::invalid_argument("degenerate");
  // Validates initial transversality.
  Splitting initial({e0, f0});

  PropagatedPair out;
  out.e.push_back(e0);
  out.f.push_back(f0);
  out.min_angle = principal_angle(e0, f0);
  for (int n = 0; n < count; ++n) {
    const Matrix& a = orbit.matrices[static_cast<std::size_t>(n)];
    Subspace e = Subspace::span(a * out.e.back().basis);
    Subspace f = Subspace::span(a * out.f.back().basis);
    Matrix stacked(d, d);
    stacked << e.basis, f.basis;
    Eigen::JacobiSVD<Matrix> svd(stacked);
    if (svd.singularValues().minCoeff() <= 1e-10)
      throw std::runtime_error("splitting collapse at step " +
                               std::to_string(n + 1));
    out.min_angle = std::min(out.min_angle, principal_angle(e, f));
    out.e.push_back(std::move(e));
    out.f.push_back(std::move(f));
  }
  return out;
}

// r_n(m) = ||A^m|F_n|| / m(A^m|E_n) from the scaled window product (the
// scale cancels in the quotient).
std::vector<double> window_ratios(const OrbitSegment& orbit,
                                  const PropagatedPair& pair, int m,
                                  int windows) {
  std::vector<double> ratios;
  ratios.reserve(static_cast<std::size_t>(windows));
  for (int n = 0; n < windows; ++n) {
    auto [w, scale] = orbit.window_scaled(n, n + m);
    double norm_f =
        restricted_norms(w, pair.f[static_cast<std::size_t>(n)]).first;
    double conorm_e =
        restricted_norms(w, pair.e[static_cast<std::size_t>(n)]).second;
    if (!(conorm_e > 0.0)) throw std::runtime_error("non-invertible");
    ratios.push_back(norm_f / conorm_e);
  }
  return ratios;
}

}  // namespace

DominationReport domination_test(const OrbitSegment& orbit, const Subspace& e,
                                 const Subspace& f, int m, int windows) {
  if (m < 1 || windows < 1 || windows + m > orbit.length())
    throw std::invalid_argument("degenerate");
  PropagatedPair pair = propagate_pair(orbit, e, f, windows - 1);
  DominationReport report;
  report.p = e.dim();
  report.m = m;
  report.windows = windows;
  report.ratios = window_ratios(orbit, pair, m, windows);
  report.min_angle = pair.min_angle;
  report.dominated = std::all_of(report.ratios.begin(), report.ratios.end(),
                                 [](double r) { return r <= 0.5; });
  return report;
}

std::optional<int> min_domination_m(const OrbitSegment& orbit,
                                    const Subspace& e, const Subspace& f,
                                    int m_max, int windows) {
  if (m_max < 1 || windows < 1 || windows + m_max > orbit.length())
    throw std::invalid_argument("degenerate");
  PropagatedPair pair = propagate_pair(orbit, e, f, windows - 1);
  for (int m = 1; m <= m_max; ++m) {
    std::vector<double> ratios = window_ratios(orbit, pair, m, windows);
    if (std::all_of(ratios.begin(), ratios.end(),
                    [](double r) { return r <= 0.5; }))
      return m;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Classification and jump estimate
// ---------------------------------------------------------------------------

namespace {

enum class PointClass { Dominated = 0, Exchanged = 1, Unresolved = 2 };

struct SampleOutcome {
  PointClass cls = PointClass::Unresolved;
  double half_gap = 0.0;
};

std::vector<SampleOutcome> classify_samples(const BaseSystem& system,
                                            const Cocycle& cocycle, int p,
                                            int m_max, int samples,
                                            int horizon, std::uint64_t seed) {
  const int d = cocycle.dim;
  if (p < 1 || p > d - 1 || samples < 1 || horizon < 100 ||
      m_max + 1 >= horizon)
    throw std::invalid_argument("degenerate");
  std::vector<SampleOutcome> outcomes(static_cast<std::size_t>(samples));
  parallel_for(static_cast<std::size_t>(samples), [&](std::size_t k) {
    Rng rng(Rng::derive(seed, k));
    Vector x = random_state(system, rng);
    SampleOutcome& out = outcomes[k];
    try {
      OseledetsApprox approx =
          oseledets_splitting(system, cocycle, x, horizon, -1.0);
      // Locate the cluster boundary at cumulative dimension p.
      int cum = 0;
      int boundary = -1;
      for (std::size_t i = 0; i < approx.multiplicities.size(); ++i) {
        cum += approx.multiplicities[i];
        if (cum == p) {
          boundary = static_cast<int>(i);
          break;
        }
        if (cum > p) break;
      }
      if (boundary < 0) return;  // gap at index p below resolution
      double gap = approx.grouped[static_cast<std::size_t>(boundary)] -
                   approx.grouped[static_cast<std::size_t>(boundary) + 1];

      Subspace e = approx.splitting.parts[0];
      for (int i = 1; i <= boundary; ++i)
        e = direct_sum(e, approx.splitting.parts[static_cast<std::size_t>(i)]);
      Subspace f =
          approx.splitting.parts[static_cast<std::size_t>(boundary) + 1];
      for (std::size_t i = static_cast<std::size_t>(boundary) + 2;
           i < approx.splitting.parts.size(); ++i)
        f = direct_sum(f, approx.splitting.parts[i]);

      OrbitSegment orbit = orbit_segment(system, cocycle, x, horizon);
      std::optional<int> found =
          min_domination_m(orbit, e, f, m_max, horizon - m_max);
      out.cls = found ? PointClass::Dominated : PointClass::Exchanged;
      out.half_gap = gap / 2.0;
    } catch (const std::exception&) {
      out.cls = PointClass::Unresolved;
      out.half_gap = 0.0;
    }
  });
  return outcomes;
}

}  // namespace

Classification classify_points(const BaseSystem& system, const Cocycle& cocycle,
                               int p, int m, int samples, int horizon,
                               std::uint64_t seed) {
  std::vector<SampleOutcome> outcomes =
      classify_samples(system, cocycle, p, m, samples, horizon, seed);
  Classification result;
  result.samples = samples;
  for (const SampleOutcome& o : outcomes) {
    switch (o.cls) {
      case PointClass::Dominated: result.dominated_fraction += 1.0; break;
      case PointClass::Exchanged: result.exchanged_fraction += 1.0; break;
      case PointClass::Unresolved: result.unresolved_fraction += 1.0; break;
    }
  }
  result.dominated_fraction /= samples;
  result.exchanged_fraction /= samples;
  result.unresolved_fraction /= samples;
  return result;
}

double jump_estimate(const BaseSystem& system, const Cocycle& cocycle, int p,
                     int m_max, int samples, int horizon, std::uint64_t seed) {
  std::vector<SampleOutcome> outcomes =
      classify_samples(system, cocycle, p, m_max, samples, horizon, seed);
  double sum = 0.0;
  for (const SampleOutcome& o : outcomes)
    if (o.cls == PointClass::Exchanged) sum += o.half_gap;
  return sum / samples;
}

// ---------------------------------------------------------------------------
// Symplectic hyperbolicity
// ---------------------------------------------------------------------------

HyperbolicityReport symplectic_hyperbolicity_check(const OrbitSegment& orbit,
                                                   const Subspace& e_plus,
                                                   const Subspace& e_minus,
                                                   int m,
                                                   const SymplecticForm& form) {
  const int d = orbit.dim();
  if (orbit.cocycle.group_tag != GroupTag::Symplectic || form.dim != d ||
      m < 1 || m >= orbit.length())
    throw std::invalid_argument("degenerate");
  if (!is_lagrangian(e_plus, form) || !is_lagrangian(e_minus, form))
    throw std::invalid_argument("not Lagrangian");

  const int windows = orbit.length() - m;
  PropagatedPair pair = propagate_pair(orbit, e_plus, e_minus, windows - 1);

  HyperbolicityReport report;
  report.m = m;
  report.windows = windows;
  report.min_angle = pair.min_angle;
  double c = form.c_omega() * form.c_omega() / std::sin(pair.min_angle);
  report.product_bound = c;
  report.margin_bound = 1.0 / (4.0 * c);

  std::vector<double> ratios = window_ratios(orbit, pair, m, windows);
  report.margin = *std::max_element(ratios.begin(), ratios.end());
  if (!(report.margin < report.margin_bound))
    throw std::runtime_error("domination margin insufficient");

  report.min_conorm_plus = std::numeric_limits<double>::infinity();
  report.max_norm_minus = 0.0;
  report.product_min = std::numeric_limits<double>::infinity();
  report.product_max = 0.0;
  bool ok = true;
  for (int n = 0; n < windows; ++n) {
    auto [w, scale] = orbit.window_scaled(n, n + m);
    double log_conorm =
        scale + std::log(restricted_norms(
                             w, pair.e[static_cast<std::size_t>(n)])
                             .second);
    double log_norm =
        scale + std::log(restricted_norms(
                             w, pair.f[static_cast<std::size_t>(n)])
                             .first);
    double conorm = std::exp(log_conorm);
    double norm = std::exp(log_norm);
    double product = std::exp(log_conorm + log_norm);
    report.min_conorm_plus = std::min(report.min_conorm_plus, conorm);
    report.max_norm_minus = std::max(report.max_norm_minus, norm);
    report.product_min = std::min(report.product_min, product);
    report.product_max = std::max(report.product_max, product);
    if (!(log_conorm > std::log(2.0)) || !(log_norm < -std::log(2.0)) ||
        !(product >= 1.0 / c) || !(product <= c))
      ok = false;
  }
  report.conclusion = ok;
  return report;
}

// ---------------------------------------------------------------------------
// Lagrangian Oseledets spaces
// ---------------------------------------------------------------------------

LagrangianReport lagrangian_oseledets_check(const BaseSystem& system,
                                            const Cocycle& cocycle,
                                            const Vector& x, int horizon,
                                            const SymplecticForm& form) {
  const int d = cocycle.dim;
  if (form.dim != d || d % 2 != 0) throw std::invalid_argument("degenerate");
  const int q = d / 2;
  OseledetsApprox approx =
      oseledets_splitting(system, cocycle, x, horizon, -1.0);
  double resolution = std::max(approx.cluster_tol, 1e-8);

  int plus_dim = 0, minus_dim = 0;
  std::vector<std::size_t> plus_idx, minus_idx;
  for (std::size_t i = 0; i < approx.grouped.size(); ++i) {
    if (approx.grouped[i] > resolution) {
      plus_dim += approx.multiplicities[i];
      plus_idx.push_back(i);
    } else if (approx.grouped[i] < -resolution) {
      minus_dim += approx.multiplicities[i];
      minus_idx.push_back(i);
    }
  }
  if (plus_dim != q || minus_dim != q)
    throw std::runtime_error("λ_q not resolved");

  auto fold = [&](const std::vector<std::size_t>& idx) {
    Subspace out = approx.splitting.parts[idx.front()];
    for (std::size_t i = 1; i < idx.size(); ++i)
      out = direct_sum(out, approx.splitting.parts[idx[i]]);
    return out;
  };
  LagrangianReport report(fold(plus_idx), fold(minus_idx));
  report.plus_defect = isotropy_defect(report.e_plus, form);
  report.minus_defect = isotropy_defect(report.e_minus, form);
  report.grouped_exponents = approx.grouped;
  return report;
}

}  // namespace cocycle
