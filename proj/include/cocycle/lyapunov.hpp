#pragma once

// Lyapunov spectrum estimation (discrete QR method), integrated exponents of
// exterior powers, numerical Oseledets splittings, and angle-decay
// diagnostics along orbits.

#include "cocycle/dynamics.hpp"
#include "cocycle/linalg.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace cocycle {

struct LyapunovEstimate {
  Vector exponents;        // sorted non-increasing, nats per iterate
  int horizon = 0;
  int cadence = 1;
  // Max change of any running exponent estimate over the last 10% of the
  // iteration, a convergence diagnostic.
  double tail_drift = 0.0;
};

struct IntegratedExponent {
  double value = 0.0;       // estimate of (1/n) E log ||wedge^p A^n||
  double std_error = 0.0;   // Monte Carlo standard error (0 when exact)
  double at_half = 0.0;     // same functional at horizon n/2
  double at_quarter = 0.0;  // and at horizon n/4
  int horizon = 0;
  int samples = 0;
  // True when the cocycle is piecewise constant in the start point and the
  // space average was integrated cell-by-cell instead of sampled.
  bool exact = false;
};

struct OseledetsApprox {
  Splitting splitting;               // parts ordered by decreasing exponent
  std::vector<double> grouped;       // distinct exponents, strictly decreasing
  std::vector<int> multiplicities;   // same length, sums to ambient dim
  double cluster_tol = 0.0;

  OseledetsApprox(Splitting s, std::vector<double> g, std::vector<int> m,
                  double tol)
      : splitting(std::move(s)),
        grouped(std::move(g)),
        multiplicities(std::move(m)),
        cluster_tol(tol) {}
};

// Discrete QR method: pushes an orthonormal frame through the cocycle,
// re-orthonormalizes every `cadence` steps, and averages the accumulated
// log-diagonals. Throws "cadence too large" if a between-reorthonormalization
// window overflows.
LyapunovEstimate qr_spectrum(const BaseSystem& system, const Cocycle& cocycle,
                             const Vector& x, int n, int cadence = 10);

// Space average of (1/n) log ||wedge^p A^n(x)||. Cocycles that are piecewise
// constant in the start point (constant, table, shear-rotate over a circle
// rotation) are integrated exactly cell by cell; other families use Monte
// Carlo over `samples` uniform start points with the given seed. Values at
// n/2 and n/4 are reported to exhibit the subadditive descent.
IntegratedExponent integrated_exponent(const BaseSystem& system,
                                       const Cocycle& cocycle, int p, int n,
                                       int samples = 64,
                                       std::uint64_t seed = 1);

// Two-sided Oseledets approximation: forward flag from right singular
// vectors of the forward product, backward flag from the inverse cocycle
// along the backward orbit, spaces recovered by intersecting the flags.
// Exponents are clustered within cluster_tol (negative = automatic,
// 10x the tail drift of the spectrum estimate). Throws "unresolved
// multiplicity" when a cluster boundary gap falls below 1e-12 or a flag
// intersection has the wrong dimension.
OseledetsApprox oseledets_splitting(const BaseSystem& system,
                                    const Cocycle& cocycle, const Vector& x,
                                    int horizon, double cluster_tol = -1.0);

// Returns (sum of the top p exponents, top exponent of the wedge^p cocycle),
// each computed independently.
std::pair<double, double> exterior_consistency(const BaseSystem& system,
                                               const Cocycle& cocycle,
                                               const Vector& x, int p,
                                               int horizon);

// Per-iterate log-slope of sin of the angle between complementary sums of
// Oseledets spaces propagated along the orbit, one value per split point
// (k - 1 values): rate_s = (1/n) * (log sin angle_n - log sin angle_0).
std::vector<double> angle_decay_rate(const BaseSystem& system,
                                     const Cocycle& cocycle, const Vector& x,
                                     int horizon);

}  // namespace cocycle
