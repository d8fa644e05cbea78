#pragma once

// Base dynamical systems (circle rotation, torus translation, cat map,
// symbolic sequences), cocycle families over them, and orbit segments with
// QR-stabilized partial products.

#include "cocycle/linalg.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace cocycle {

// ---------------------------------------------------------------------------
// Base systems
// ---------------------------------------------------------------------------

// State encoding: circle rotation uses a 1-vector in [0,1); torus translation
// and the cat map use 2-vectors mod 1; symbolic systems store the current
// index into their state sequence as a 1-vector (advance is cyclic).
struct BaseSystem {
  enum class Kind { CircleRotation, TorusTranslation, CatMap, Symbolic };

  Kind kind = Kind::CircleRotation;
  double alpha = 0.0;              // circle rotation step
  Vector translation;              // torus translation vector
  std::vector<double> sequence;    // symbolic state values

  static BaseSystem circle_rotation(double alpha);
  static BaseSystem torus_translation(const Vector& v);
  static BaseSystem cat_map();
  static BaseSystem symbolic(std::vector<double> states);

  int state_dim() const;
  // Value of the scalar observable at a state (the angle theta for circle
  // rotation, first coordinate for torus/cat, the sequence value for
  // symbolic states).
  double observable(const Vector& x) const;
};

Vector step(const BaseSystem& system, const Vector& x);
Vector step_back(const BaseSystem& system, const Vector& x);

class Rng;
// Uniform random state: coordinates in [0,1) for continuous systems, a
// uniform sequence index for symbolic ones.
Vector random_state(const BaseSystem& system, Rng& rng);

// ---------------------------------------------------------------------------
// Potentials on the circle
// ---------------------------------------------------------------------------

struct Potential {
  enum class Kind { Zero, Cosine, Table };

  Kind kind = Kind::Zero;
  double lambda = 0.0;             // cosine amplitude: V(t) = 2*lambda*cos(2 pi t)
  std::vector<double> samples;     // uniform grid on [0,1), linear interpolation

  static Potential zero();
  static Potential cosine(double lambda);
  static Potential table(std::vector<double> samples);

  double operator()(double theta) const;
};

// ---------------------------------------------------------------------------
// Cocycles
// ---------------------------------------------------------------------------

struct Cocycle {
  enum class Kind { Constant, Schrodinger, ShearRotate, Table };

  Kind kind = Kind::Constant;
  int dim = 2;
  GroupTag group_tag = GroupTag::GeneralLinear;

  Matrix constant;                               // Constant
  double energy = 0.0;                           // Schrodinger energy E
  Potential potential;                           // Schrodinger potential V
  Matrix shear_diag;                             // ShearRotate diagonal D
  // Step function for the shear-rotate angle: sorted breakpoints b_i in
  // [0,1) with values; theta(x) is the value of the interval containing x.
  std::vector<std::pair<double, double>> theta_steps;
  std::vector<Matrix> table;                     // Table entries

  static Cocycle constant_cocycle(const Matrix& m,
                                  GroupTag tag = GroupTag::GeneralLinear);
  static Cocycle schrodinger(double energy, Potential v);
  static Cocycle shear_rotate(const Matrix& diag,
                              std::vector<std::pair<double, double>> steps);
  static Cocycle from_table(std::vector<Matrix> entries,
                            GroupTag tag = GroupTag::GeneralLinear);

  // Matrix of the cocycle at a base state.
  Matrix matrix_at(const BaseSystem& system, const Vector& x) const;

  // Conservative bounds sup ||A|| and sup ||A^{-1}||: exact for constant and
  // table cocycles, dense grid samples (1024 points) for state-dependent
  // families.
  std::pair<double, double> norm_bounds() const;
};

// Transfer matrix [[E - V(theta), -1], [1, 0]]; determinant 1 exactly.
Matrix schrodinger_matrix(double energy, const Potential& v, double theta);

// ---------------------------------------------------------------------------
// Orbit segments with factored partial products
// ---------------------------------------------------------------------------

// Factored prefix product A^j = q * diag(exp(logdiag)) * runit with q
// orthogonal and runit unit-diagonal upper triangular. Keeping the diagonal
// in log scale prevents overflow for horizons up to 1e7.
struct Factored {
  Matrix q;
  Vector logdiag;
  Matrix runit;

  Matrix recompose() const;
};

// Incrementally maintains a matrix product in factored form; usable for any
// matrix stream (forward cocycle, inverse cocycle, exterior powers).
struct ProductAccumulator {
  Factored value;

  explicit ProductAccumulator(int dim);
  // value <- factor(a * value)
  void push(const Matrix& a);
  // Current product as (normalized matrix, log scale): product = e^s * W.
  std::pair<Matrix, double> scaled() const;
};

struct OrbitSegment {
  BaseSystem system;
  Cocycle cocycle;
  std::vector<Vector> states;       // x_0, ..., x_n
  std::vector<Matrix> matrices;     // A_0, ..., A_{n-1}
  std::vector<Factored> prefixes;   // prefixes[j] = A^j, prefixes[0] = I
  int reprojections = 0;            // special-linear drift corrections

  int length() const { return static_cast<int>(matrices.size()); }
  int dim() const { return cocycle.dim; }

  // Dense window product A_{l-1} ... A_k (throws if it would overflow).
  Matrix window(int k, int l) const;
  // Same product as (normalized matrix, log-scale): product = e^s * W.
  std::pair<Matrix, double> window_scaled(int k, int l) const;

  // Direction (unit vector) of A^j v and of (A^j)^{-1} v.
  Vector apply_direction(int j, const Vector& v) const;
  Vector solve_direction(int j, const Vector& v) const;

  // Image subspace A^j(E), orthonormalized.
  Subspace propagate(const Subspace& e, int j) const;
};

// Generates states, matrices and factored partial products along the orbit
// of x. Special-linear matrices with determinant drift in (1e-9, 1e-6] are
// re-projected (counted in `reprojections`); any worse group violation
// throws "group violation at step j".
OrbitSegment orbit_segment(const BaseSystem& system, const Cocycle& cocycle,
                           const Vector& x, int n);

}  // namespace cocycle
