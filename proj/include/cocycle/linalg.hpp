#pragma once

// Core linear-algebra layer: matrix group tags, subspaces and splittings,
// restricted norms and co-norms, principal angles, exterior powers, and the
// planar / symplectic angle toolbox used by the perturbation engine.

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

namespace cocycle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class GroupTag { GeneralLinear, SpecialLinear, Symplectic, Orthogonal };

std::string to_string(GroupTag tag);
GroupTag group_tag_from_string(const std::string& name);

// Residual of membership in the tagged group: 0 for general-linear,
// |det - 1| for special-linear, max-norm of M^T J M - J for symplectic,
// max-norm of M^T M - I for orthogonal.
double group_residual(const Matrix& m, GroupTag tag);

// Invertible d x d matrix carrying the group it is expected to live in.
// Construction validates finiteness, invertibility (throws "non-invertible")
// and a group residual of at most 1e-9 (throws "group violation").
struct SquareMatrix {
  Matrix entries;
  GroupTag group_tag = GroupTag::GeneralLinear;

  explicit SquareMatrix(Matrix m, GroupTag tag = GroupTag::GeneralLinear);
  int dim() const { return static_cast<int>(entries.rows()); }
  double residual() const { return group_residual(entries, group_tag); }
};

// Linear subspace stored as a d x k matrix with orthonormal columns
// (deviation from orthonormality at most 1e-10).
struct Subspace {
  Matrix basis;

  explicit Subspace(Matrix orthonormal_basis);
  // Orthonormalizes arbitrary spanning vectors (columns); throws
  // "degenerate" if they are rank-deficient.
  static Subspace span(const Matrix& vectors);

  int ambient_dim() const { return static_cast<int>(basis.rows()); }
  int dim() const { return static_cast<int>(basis.cols()); }
  // Orthogonal projection of v onto the subspace.
  Vector project(const Vector& v) const { return basis * (basis.transpose() * v); }
};

// Direct-sum decomposition of the ambient space. Construction checks that
// the concatenated bases are genuinely transversal (smallest singular value
// of the stacked basis above 1e-10; throws "degenerate").
struct Splitting {
  std::vector<Subspace> parts;

  explicit Splitting(std::vector<Subspace> parts_in);
  int ambient_dim() const { return parts.empty() ? 0 : parts.front().ambient_dim(); }
  // Smallest singular value of the concatenated basis matrix.
  double transversality() const;
};

// Standard symplectic form on R^{2q}, pairing coordinate i with 2q+1-i:
// J e_i = e_{2q+1-i} for i <= q and J e_{2q+1-i} = -e_i. For q = 1 this is
// [[0,-1],[1,0]]. omega(u, v) = <J u, v>, and ||J|| = ||J^{-1}|| = 1.
struct SymplecticForm {
  int dim;   // 2q
  Matrix J;

  explicit SymplecticForm(int dim_in);
  int q() const { return dim / 2; }
  double omega(const Vector& u, const Vector& v) const { return (J * u).dot(v); }
  double c_omega() const { return 1.0; }
};

// ---------------------------------------------------------------------------
// Norms and angles
// ---------------------------------------------------------------------------

// Operator norm (largest singular value).
double opnorm(const Matrix& l);

// Co-norm m(L) = ||L^{-1}||^{-1} = smallest singular value. Throws
// "non-invertible" if the matrix is singular to working precision.
double conorm(const Matrix& l);

// (||L|E||, m(L|E)): largest and smallest singular value of L restricted to
// the subspace E.
std::pair<double, double> restricted_norms(const Matrix& l, const Subspace& e);

// Unit vectors in E realizing the restricted norm extremes:
// first = argmax ||L v||, second = argmin ||L v|| over unit v in E.
std::pair<Vector, Vector> restricted_extremes(const Matrix& l, const Subspace& e);

// Smallest principal angle between two subspaces, in [0, pi/2]; 0 when they
// intersect nontrivially.
double principal_angle(const Subspace& e, const Subspace& f);

// Angle between nonzero vectors in [0, pi].
double angle_between(const Vector& v, const Vector& w);
// sin of the (unoriented) angle between nonzero vectors, in [0, 1].
double sin_angle(const Vector& v, const Vector& w);
// sin of the angle between a nonzero vector and a subspace:
// ||v - P_E v|| / ||v||.
double sin_angle(const Vector& v, const Subspace& e);

// sin-angle distortion ratio sin(angle(Lv, Lw)) / sin(angle(v, w)).
// Throws "degenerate pair" if v, w are dependent (or zero).
double angle_distortion_ratio(const Matrix& l, const Vector& v, const Vector& w);

// Planar (d = 2) bound data: returns (lhs, rhs) with
//   lhs = ||L|| / m(L),
//   rhs = 4 * max{||Lv||/||Lw||, ||Lw||/||Lv||} / (sin angle(v,w) * sin angle(Lv,Lw)).
// Throws "degenerate pair" on dependent inputs.
std::pair<double, double> planar_angle_bound_check(const Matrix& l,
                                                   const Vector& v,
                                                   const Vector& w);

// Triple-angle comparison: returns (lhs, rhs) with
//   lhs = sin angle(A, B + C), rhs = sin angle(A, B) * sin angle(A + B, C).
// Throws "degenerate configuration" if either sum fails to be direct.
std::pair<double, double> triple_angle_check(const Subspace& a,
                                             const Subspace& b,
                                             const Subspace& c);

// ---------------------------------------------------------------------------
// Exterior powers
// ---------------------------------------------------------------------------

// Lexicographically ordered p-element index sets of {0, ..., d-1}.
std::vector<std::vector<int>> lex_index_sets(int d, int p);

// Matrix of the p-th exterior power on the lexicographic wedge basis
// (entries are p x p minors). p = 0 gives [1].
Matrix exterior_power(const Matrix& l, int p);

// Wedge (Pluecker) coordinates of the decomposable p-vector spanned by the
// columns of frame (d x p), on the lexicographic basis.
Vector wedge_coordinates(const Matrix& frame);

// ---------------------------------------------------------------------------
// Symplectic toolbox
// ---------------------------------------------------------------------------

// Max |omega(b_i, b_j)| over the subspace basis: 0 for isotropic subspaces.
double isotropy_defect(const Subspace& e, const SymplecticForm& form);

// Lagrangian = isotropic of dimension q (defect tolerance tol).
bool is_lagrangian(const Subspace& e, const SymplecticForm& form, double tol = 1e-9);

// For transverse Lagrangians E, F and nonzero v in E, returns the companion
// w = projection of Jv onto F along E together with the normalized pairing
// |omega(v, w)| / (||v|| ||w||), which is at least sin angle(E, F).
// Throws "not Lagrangian" when E or F fails to be Lagrangian or the pair is
// not transverse, and "degenerate pair" when v does not lie in E.
std::pair<Vector, double> symplectic_pairing_bound(const Subspace& e,
                                                   const Subspace& f,
                                                   const Vector& v,
                                                   const SymplecticForm& form);

// ---------------------------------------------------------------------------
// Constructions
// ---------------------------------------------------------------------------

// Orthonormalizes the columns (thin QR); throws "degenerate" on rank
// deficiency.
Matrix orthonormalize(const Matrix& vectors);

// Span of the union of two subspaces; throws "degenerate configuration" if
// the sum is not direct.
Subspace direct_sum(const Subspace& a, const Subspace& b);

Subspace orthogonal_complement(const Subspace& e);

// Intersection of two subspaces: principal directions whose cosine exceeds
// 1 - tol are taken to be common. Returns a (possibly zero-dimensional)
// basis matrix.
Matrix intersect(const Subspace& a, const Subspace& b, double tol = 1e-8);

// Minimal rotation (identity on the orthocomplement of span{v, w}) taking
// the line through v to the line through w; the image of v/||v|| is the unit
// representative of w nearer to v, so the rotation angle is at most pi/2.
// Throws "degenerate pair" on zero input.
Matrix rotation_between(const Vector& v, const Vector& w);

// Planar rotation by the signed angle theta inside the oriented plane
// spanned by the orthonormal pair (p, q); identity on the complement.
Matrix plane_rotation(const Vector& p, const Vector& q, double theta);
// Rotation by theta in the coordinate plane spanned by axes i and j.
Matrix plane_rotation(int dim, int i, int j, double theta);

// QR factorization b = q * r with the diagonal of r non-negative.
void signed_qr(const Matrix& b, Matrix& q, Matrix& r);

// Rescales M by |det|^{-1/d} so the result has |determinant| = 1 (and
// determinant +1 whenever det M > 0). Throws "non-invertible" when the
// determinant vanishes to working precision.
Matrix special_linear_reproject(const Matrix& m);

}  // namespace cocycle
