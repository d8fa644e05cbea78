#pragma once

// Compactly supported nonlinear maps ("kernels") that realize a prescribed
// linear rotation on an inner region and fade to the identity outside a
// cylinder or an energy ball, together with grid-based verification of
// volume preservation, symplecticity, support, and closeness to the
// identity.

#include <cstdint>
#include <functional>
#include <vector>

#include "cocycle/linalg.hpp"

namespace cocycle {

// Geometry of a cylinder a*A (+) b*B inside R^d: an ellipsoid A in the
// codimension-two axis subspace X, an ellipse B in the orthogonal plane Y,
// scale factors a and b, a shrink factor for the inner region, and the
// rotation angle the kernel realizes on the core.
struct CylinderSpec {
  int dim = 0;
  // Orthonormal basis of the axis subspace X, dim x (dim - 2). May have
  // zero columns when dim == 2.
  Matrix axis;
  // Positive-definite quadratic form of the axis ellipsoid A in axis
  // coordinates: A = { u : u^T Q u <= 1 }. Size (dim-2) x (dim-2).
  Matrix axis_form;
  // Orthonormal basis of the plane Y = X-perp, dim x 2. Column 0 carries
  // the long ellipse semi-axis, column 1 the short one.
  Matrix plane;
  // Ellipse B = { (x, y) : (x/lambda)^2 + (lambda*y)^2 <= rho^2 } in plane
  // coordinates; eccentricity lambda >= 1, radius rho > 0.
  double eccentricity = 1.0;
  double radius = 1.0;
  double scale_a = 1.0;
  double scale_b = 1.0;
  // Inner-region shrink factor, strictly between 0 and 1.
  double shrink = 0.5;
  // Rotation angle of the core map: the ellipse B is rotated through this
  // angle (conjugated rotation H_lambda R_angle H_lambda^{-1}).
  double angle = 0.0;
};

// Nonlinear map with an analytic (or variationally integrated) Jacobian and
// enough geometry for grid verification.
struct KernelMap {
  int dim = 0;
  std::function<Vector(const Vector&)> value;
  std::function<Matrix(const Vector&)> jacobian;
  // The linear map the kernel realizes on the inner region.
  Matrix inner_map;
  // Region classification: -1 outside the support (the map is exactly the
  // identity there), +1 on the inner core (the map agrees with inner_map),
  // 0 in the transition shell.
  std::function<int(const Vector&)> region;
  // Verification domain membership (twice the support cylinder / ball).
  std::function<bool(const Vector&)> domain;
  // Sampling frame and box: verification points are frame * c where the
  // coordinates of c are drawn from [-box_half[i], box_half[i]].
  Matrix frame;
  Vector box_half;
  // Symplectic structure to verify against; zero-size for volume kernels.
  Matrix form;
  // Tolerance for "agrees with inner_map" accounting in verification.
  double inner_tol = 1e-10;
  // When true the inner promise is Dh == inner_map (composite kernels);
  // otherwise it is h(z) == inner_map * z.
  bool inner_is_derivative = false;
};

// Grid-verification summary. All fields are non-negative.
struct KernelReport {
  // max |det(Dh) - 1| over the grid.
  double max_det_defect = 0.0;
  // max ||Dh - I|| (operator norm) over the grid.
  double max_jacobian_defect = 0.0;
  // max ||h(z) - z|| over the grid.
  double max_displacement = 0.0;
  // Points outside the support that moved, plus inner points where the map
  // disagrees with its linear model beyond inner_tol.
  int support_violations = 0;
  // max ||Dh^T J Dh - J|| over the grid; zero when no form is attached.
  double symplectic_residual = 0.0;
  // Number of grid points evaluated.
  int points = 0;
};

// Composite kernel assembled from two single-sign factors over a packing of
// the base region by scaled copies: the derivative equals the target
// rotation on the kept set.
struct CompositeKernel {
  KernelMap map;
  // Membership in the base region U and in the kept set K.
  std::function<bool(const Vector&)> base;
  std::function<bool(const Vector&)> kept;
  // Placed copy centers and scales (in eigen-coordinates).
  std::vector<Vector> centers;
  std::vector<double> scales;
  // Fraction of the base volume covered by the placed copies.
  double covered_fraction = 0.0;
};

// C^2 quintic plateau bump: 1 on (-inf, lo], 0 on [hi, +inf), monotone in
// between with |slope| <= 1.875 / (hi - lo) and |curvature| <= 5.8 / (hi-lo)^2.
double plateau_bump(double t, double lo, double hi);
// Derivatives of the bump in t.
double plateau_bump_d1(double t, double lo, double hi);
double plateau_bump_d2(double t, double lo, double hi);

// Block-diagonal symplectic structure on interleaved complex pairs
// (x_1, y_1, ..., x_q, y_q): multiplication by i. omega(u, v) = (J u) . v.
Matrix pair_form(int q);

// Largest rotation size ||R - I|| admissible for a target closeness eps0 and
// shrink sigma in the volume kernel construction (the 18 eps / (1 - sigma)
// budget, with the angle-versus-sine slack folded in).
double kernel_epsilon(double eps0, double sigma);

// Volume-preserving cylinder kernel: the identity outside the cylinder
// C = a*A (+) b*B, the rotation of the ellipse through spec.angle on the
// shrunken cylinder, interpolated by plateau bumps in between. det(Dh) = 1
// identically. Throws "cylinder not thin enough" when a <= tau * b with
// tau = ||Q^(1/2)||, and "degenerate" on malformed geometry.
KernelMap volume_kernel(const CylinderSpec& spec);

// Unitary kernel: for an orthogonal-and-symplectic r (with respect to
// pair_form) whose eigenvalue arguments share one sign, the time-1 map of a
// cut-off quadratic Hamiltonian. Equals r on the energy ball {H <= sigma^2},
// the identity on {H >= 1}; exactly symplectic in closed form. Throws
// "use composite kernel" on mixed-sign arguments and "degenerate" when r is
// not unitary.
KernelMap unitary_kernel(const Matrix& r, double shrink);

// Mixed-sign unitary kernel: factor r into single-sign rotations r = r+ r-,
// pack the base region of r+ by disjoint scaled copies of the r- region via
// deterministic dyadic subdivision, and compose. The derivative equals r on
// the kept set, whose complement in the base region has volume below
// 3 (1 - sigma^d) vol(base).
CompositeKernel composite_unitary_kernel(const Matrix& r, double shrink);

// Symplectic cylinder kernel: time-t0 map of the Hamiltonian that equals the
// quadratic rotation energy on the shrunken cylinder and is constant outside
// the cylinder, integrated adaptively together with its variational
// equations. axis/plane are orthonormal bases of X and its symplectically
// invariant orthogonal plane Y; axis_form is the ellipsoid form on X.
// Throws "degenerate" on malformed geometry, "cylinder not thin enough"
// when a <= ||Q^(1/2)|| b, and "flow integration failed" when the adaptive
// integrator cannot reach t0.
KernelMap symplectic_cylinder_kernel(const Matrix& axis, const Matrix& plane,
                                     const Matrix& axis_form, double a,
                                     double b, double shrink, double t0);

// Evaluates the kernel on a deterministic low-discrepancy grid inside its
// verification domain and accumulates the report fields. The grid is a
// Halton sequence (offset by seed) mapped through the kernel's sampling
// frame; points outside the domain are discarded until `resolution` points
// have been kept.
KernelReport kernel_verify(const KernelMap& map, int resolution = 10000,
                           std::uint64_t seed = 12345);

}  // namespace cocycle
