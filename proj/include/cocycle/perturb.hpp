#pragma once

#include "cocycle/dynamics.hpp"
#include "cocycle/linalg.hpp"

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cocycle {

// ---------------------------------------------------------------------------
// Perturbation budgets
// ---------------------------------------------------------------------------

// Per-step budget for matrix perturbations of a cocycle with the given norm
// bounds, together with the derived angle threshold and horizon constants.
// The horizon guarantees are extremely conservative; m_min values are exact
// integers stored as doubles because the symplectic one can exceed 2^63.
struct PerturbBudget {
  double epsilon = 0.0;   // allowed ‖L_j − A_j‖ per step
  double epsilon1 = 0.0;  // rotation budget epsilon / ‖A‖_∞
  double alpha = 0.0;     // angle threshold arcsin(epsilon1 / √2)
  double K = 0.0;         // max(1/sin²α, ‖A‖_∞ ‖A⁻¹‖_∞)
  double C = 0.0;         // 8K / sin²α
  double m_min = 1.0;     // ⌈2C/α⌉
  bool alpha_clamped = false;

  // Extension used by the symplectic interchange.
  double ecc_sq = 0.0;             // E² = 8 c_ω⁴ K sin⁻⁴α
  double sin_gamma = 0.0;          // ½ c_ω⁻¹⁴ K⁻² sin⁹α
  double beta = 0.0;               // arcsin(sin_gamma · epsilon1 / (√2 E²))
  double m_min_symplectic = 1.0;   // ⌈2π/β⌉
};

PerturbBudget compute_budget(double norm_a, double norm_a_inv, double epsilon);

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

// Smallest rotation carrying the line through v1 to the line through v2,
// identity on a complement: planar (fixing span{v1,v2}^⊥) for the linear
// groups, unitary (orthogonal ∩ symplectic for the standard form, acting in
// the complex span of the pair) for the symplectic tag. Requires
// sin∠(v1,v2) < epsilon1/√2; then ‖R − I‖ = 2 sin(∠/2) ≤ √2 sin∠ < epsilon1.
SquareMatrix rotation_to(const Vector& v1, const Vector& v2, GroupTag tag,
                         double epsilon1);

// ---------------------------------------------------------------------------
// Perturbed matrix sequences
// ---------------------------------------------------------------------------

enum class StepCase {
  Unchanged,
  Case1Rotation,
  Case2Rotation,
  Case3Advance,
  NestedRotation,
  ExchangeBlock,
};

enum class InterchangeCase { None, Angle, Ratio, Advance };

// A sequence L_0, …, L_{m−1} shadowing a stretch of cocycle matrices with a
// sparse set of modified steps. Unmodified steps delegate to the base matrix
// (an orbit window, or an explicit list after inversion).
struct PerturbedSequence {
  std::shared_ptr<const OrbitSegment> orbit;  // null when dense_base is used
  int start = 0;
  int count = 0;
  std::vector<Matrix> dense_base;  // base matrices when orbit is null
  GroupTag tag = GroupTag::GeneralLinear;
  double epsilon = 0.0;

  std::map<int, Matrix> modified;   // local step index -> replacement L_j
  std::map<int, StepCase> cases;    // provenance for the modified steps

  Vector v, w;                       // witness directions (may be empty)
  double residual = 0.0;             // sin∠(L_{m−1}···L_0 v, w)
  InterchangeCase case_used = InterchangeCase::None;
  bool below_guaranteed_horizon = false;
  std::vector<double> chart;         // case-3 oriented angles [u_0..u_m]
  std::vector<std::string> warnings;

  int length() const { return count; }
  Matrix base_matrix(int j) const;
  Matrix matrix(int j) const;
  double distance(int j) const;      // ‖L_j − base_j‖
  StepCase case_at(int j) const;

  // Image direction of v0 under the whole sequence with its log magnitude.
  std::pair<Vector, double> apply_scaled(const Vector& v0) const;

  // Asserts the type invariants (budgets, group membership, residual);
  // throws std::runtime_error on any violation.
  void validate() const;
};

PerturbedSequence trivial_sequence(std::shared_ptr<const OrbitSegment> orbit,
                                   int start, int count, double epsilon);

// Directions interchange: produces a sequence carrying a direction of E into
// the image of F across the whole window, dispatching on small angle (one
// rotation), a large window ratio (two rotations), or the oriented-angle
// advance (a rotation composed at every step).
PerturbedSequence interchange(std::shared_ptr<const OrbitSegment> orbit,
                              int start, int count, const Subspace& e,
                              const Subspace& f, const PerturbBudget& budget,
                              bool allow_short_horizon = false);
PerturbedSequence interchange(const OrbitSegment& orbit, const Subspace& e,
                              const Subspace& f, const PerturbBudget& budget,
                              bool allow_short_horizon = false);

// Lagrangian variant: rotations are unitary in cases 1–2; case 3 rotates the
// symplectic plane spanned by the witness pair, conjugated along the orbit,
// so every step is exactly symplectic.
PerturbedSequence interchange_symplectic(
    std::shared_ptr<const OrbitSegment> orbit, int start, int count,
    const Subspace& e, const Subspace& f, const PerturbBudget& budget,
    const SymplecticForm& form, bool allow_short_horizon = false);
PerturbedSequence interchange_symplectic(const OrbitSegment& orbit,
                                         const Subspace& e, const Subspace& f,
                                         const PerturbBudget& budget,
                                         const SymplecticForm& form,
                                         bool allow_short_horizon = false);

PerturbedSequence concat(const PerturbedSequence& s1,
                         const PerturbedSequence& s2);
PerturbedSequence invert(const PerturbedSequence& s);

// ---------------------------------------------------------------------------
// Nested rotations and the eccentricity diagnostic
// ---------------------------------------------------------------------------

// Realizes quotient rotations along an invariant codimension-2 family:
// L_j = A_j R_j with R_j identity on X_j = A^j(X_0) and inducing rhat_j on
// the 2-dimensional quotient. x0 is an orthonormal basis of the axis family
// seed (d x (d-2); zero columns when d = 2). b0 maps the unit circle to the
// initial ellipse in the quotient chart at step 0; each rhat_j must preserve
// the transported ellipse. The invariance of the transported cylinder is
// verified on sampled ellipse points.
PerturbedSequence nested_rotation_sequence(const OrbitSegment& orbit,
                                           const Matrix& x0,
                                           const Matrix& b0,
                                           const std::vector<Matrix>& rhats,
                                           const PerturbBudget& budget);

struct EccentricityReport {
  std::vector<double> distortions;  // ‖A^j/X_0‖ / m(A^j/X_0) for j = 0..m
  double bound = 0.0;               // 8K / sin⁶α
  Matrix x0;  // orthonormal basis of the constructed invariant family seed
};

// Checks the advance-case hypotheses (angles ≥ alpha at every step, window
// ratios ≤ K), builds the invariant codimension-2 family from the extremal
// complements, and reports the per-step quotient distortions with the bound.
EccentricityReport eccentricity_diagnostic(const OrbitSegment& orbit,
                                           const Subspace& e, const Subspace& f,
                                           double alpha, double K);

// ---------------------------------------------------------------------------
// Norm-lowering sequence
// ---------------------------------------------------------------------------

struct LowerNormReport {
  PerturbedSequence sequence;
  double achieved = 0.0;            // (1/n) log‖∧^p of the modified product‖
  double unperturbed = 0.0;         // same for the original matrices
  int exchange_position = 0;        // step where the interchange block starts
  int block_length = 0;
  double v_leak = 0.0;              // relative top-direction component of the
                                    // block image of the top wedge direction
  std::array<double, 3> block_log_norms{};  // log norms of the three nonzero
                                            // blocks of the split product
};

// Splices an interchange block into the middle of the orbit so that the top
// p-volume growth drops toward the average of the neighbouring growth rates.
// ell is the requested block position; nearby positions are scanned for a
// non-domination witness.
LowerNormReport lower_norm_sequence(const OrbitSegment& orbit, int p, int ell,
                                    const PerturbBudget& budget,
                                    double delta = 0.05);

}  // namespace cocycle
