#pragma once

// m-domination testing along orbits, index-set classification of sampled
// points, the jump-size estimate, and the symplectic domination-implies-
// hyperbolicity verification.

#include "cocycle/dynamics.hpp"
#include "cocycle/linalg.hpp"
#include "cocycle/lyapunov.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace cocycle {

struct DominationReport {
  int p = 0;                   // dimension of the expanding bundle E
  int m = 0;                   // window length tested
  int windows = 0;             // windows n = 0 .. windows-1 were evaluated
  std::vector<double> ratios;  // r_n(m) = ||A^m|F_n|| / m(A^m|E_n)
  bool dominated = false;      // every ratio <= 1/2 (exact comparison)
  double min_angle = 0.0;      // smallest principal angle between E_n, F_n
};

// Propagates E_n = A^n(E), F_n = A^n(F) step by step with
// re-orthonormalization and evaluates the window ratios. Throws "splitting
// collapse at step n" if the propagated pair loses transversality.
DominationReport domination_test(const OrbitSegment& orbit, const Subspace& e,
                                 const Subspace& f, int m, int windows);

// Smallest m <= m_max for which domination_test succeeds on the given
// windows, or nullopt.
std::optional<int> min_domination_m(const OrbitSegment& orbit,
                                    const Subspace& e, const Subspace& f,
                                    int m_max, int windows);

struct Classification {
  int samples = 0;
  double dominated_fraction = 0.0;   // index-p dominated along the orbit
  double exchanged_fraction = 0.0;   // resolved gap but no domination
  double unresolved_fraction = 0.0;  // exponent gap below resolution
};

// Samples start points, estimates the exponent gap at index p, and scans
// window lengths up to m for domination. Per-point failures count as
// unresolved rather than erroring.
Classification classify_points(const BaseSystem& system, const Cocycle& cocycle,
                               int p, int m, int samples, int horizon,
                               std::uint64_t seed);

// Monte Carlo estimate of the expected jump size: the mean of
// (lambda_p - lambda_{p+1})/2 over exchanged-class samples, weighted by the
// exchanged-class fraction.
double jump_estimate(const BaseSystem& system, const Cocycle& cocycle, int p,
                     int m_max, int samples, int horizon, std::uint64_t seed);

struct HyperbolicityReport {
  int m = 0;
  int windows = 0;
  double min_angle = 0.0;     // min angle between the propagated bundles
  double margin = 0.0;        // max window ratio observed
  double margin_bound = 0.0;  // 1/(4C) with C = c_omega^2 / sin(min angle)
  double min_conorm_plus = 0.0;
  double max_norm_minus = 0.0;
  double product_min = 0.0;   // extremes of m(A^m|E+_n) * ||A^m|E-_n||
  double product_max = 0.0;
  double product_bound = 0.0;  // C
  bool conclusion = false;     // conorm > 2, norm < 1/2, products within C
};

// Checks that a strongly dominated Lagrangian splitting of a symplectic
// cocycle is uniformly hyperbolic on the tested windows. Throws "domination
// margin insufficient" when the strengthened precondition ratio < 1/(4C)
// fails; throws "not Lagrangian" for non-Lagrangian input bundles.
HyperbolicityReport symplectic_hyperbolicity_check(const OrbitSegment& orbit,
                                                   const Subspace& e_plus,
                                                   const Subspace& e_minus,
                                                   int m,
                                                   const SymplecticForm& form);

struct LagrangianReport {
  Subspace e_plus;
  Subspace e_minus;
  double plus_defect = 0.0;   // max |omega(b_i, b_j)| over the E+ basis
  double minus_defect = 0.0;  // same for E-
  std::vector<double> grouped_exponents;

  LagrangianReport(Subspace ep, Subspace em)
      : e_plus(std::move(ep)), e_minus(std::move(em)) {}
};

// Estimates the Oseledets splitting at x, sums the positive-exponent spaces
// into E+ and the negative ones into E-, and reports the isotropy defect of
// each under the form. Throws "λ_q not resolved" when the exponents do not
// split into q positive and q negative groups beyond resolution.
LagrangianReport lagrangian_oseledets_check(const BaseSystem& system,
                                            const Cocycle& cocycle,
                                            const Vector& x, int horizon,
                                            const SymplecticForm& form);

}  // namespace cocycle
