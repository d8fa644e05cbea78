#include "cocycle/linalg.hpp"

#include <Eigen/SVD>
#include <Eigen/QR>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cocycle {

namespace {

Eigen::JacobiSVD<Matrix> svd_of(const Matrix& m, unsigned options = 0) {
  return Eigen::JacobiSVD<Matrix>(m, options);
}

double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }

// sin of the principal angle from the largest cross-Gram singular value,
// computed as sqrt(1 - sigma^2) with clamping.
double sin_from_cos(double c) {
  double cc = clamp01(c);
  return std::sqrt(std::max(0.0, (1.0 - cc) * (1.0 + cc)));
}

}  // namespace

std::string to_string(GroupTag tag) {
  switch (tag) {
    case GroupTag::GeneralLinear: return "general-linear";
    case GroupTag::SpecialLinear: return "special-linear";
    case GroupTag::Symplectic: return "symplectic";
    case GroupTag::Orthogonal: return "orthogonal";
  }
  return "general-linear";
}

GroupTag group_tag_from_string(const std::string& name) {
  if (name == "general-linear" || name == "gl") return GroupTag::GeneralLinear;
  if (name == "special-linear" || name == "sl") return GroupTag::SpecialLinear;
  if (name.rfind("symplectic", 0) == 0 || name == "sp") return GroupTag::Symplectic;
  if (name == "orthogonal" || name == "o") return GroupTag::Orthogonal;
  throw std::invalid_argument("unknown group tag: " + name);
}

double group_residual(const Matrix& m, GroupTag tag) {
  const int d = static_cast<int>(m.rows());
  switch (tag) {
    case GroupTag::GeneralLinear:
      return 0.0;
    case GroupTag::SpecialLinear:
      return std::abs(m.determinant() - 1.0);
    case GroupTag::Symplectic: {
      if (d % 2 != 0) return std::numeric_limits<double>::infinity();
      SymplecticForm form(d);
      return (m.transpose() * form.J * m - form.J).cwiseAbs().maxCoeff();
    }
    case GroupTag::Orthogonal:
      return (m.transpose() * m - Matrix::Identity(d, d)).cwiseAbs().maxCoeff();
  }
  return 0.0;
}

SquareMatrix::SquareMatrix(Matrix m, GroupTag tag)
    : entries(std::move(m)), group_tag(tag) {
  if (entries.rows() == 0 || entries.rows() != entries.cols())
    throw std::invalid_argument("degenerate");
  if (!entries.allFinite()) throw std::invalid_argument("non-invertible");
  auto svd = svd_of(entries);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (!(smin > smax * 1e-13) || smax == 0.0)
    throw std::invalid_argument("non-invertible");
  if (!(residual() <= 1e-9)) throw std::invalid_argument("group violation");
}

Subspace::Subspace(Matrix orthonormal_basis) : basis(std::move(orthonormal_basis)) {
  if (basis.rows() == 0 || basis.cols() == 0 || basis.cols() > basis.rows())
    throw std::invalid_argument("degenerate");
  if (!basis.allFinite()) throw std::invalid_argument("degenerate");
  const int k = static_cast<int>(basis.cols());
  double dev = (basis.transpose() * basis - Matrix::Identity(k, k))
                   .cwiseAbs()
                   .maxCoeff();
  if (!(dev <= 1e-10)) throw std::invalid_argument("degenerate");
}

Subspace Subspace::span(const Matrix& vectors) {
  return Subspace(orthonormalize(vectors));
}

Splitting::Splitting(std::vector<Subspace> parts_in) : parts(std::move(parts_in)) {
  if (parts.empty()) throw std::invalid_argument("degenerate");
  const int d = parts.front().ambient_dim();
  int total = 0;
  for (const auto& p : parts) {
    if (p.ambient_dim() != d) throw std::invalid_argument("degenerate");
    total += p.dim();
  }
  if (total != d) throw std::invalid_argument("degenerate");
  if (!(transversality() > 1e-10)) throw std::invalid_argument("degenerate");
}

double Splitting::transversality() const {
  const int d = ambient_dim();
  Matrix all(d, d);
  int col = 0;
  for (const auto& p : parts) {
    all.middleCols(col, p.dim()) = p.basis;
    col += p.dim();
  }
  auto svd = svd_of(all);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

SymplecticForm::SymplecticForm(int dim_in) : dim(dim_in) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("degenerate");
  J = Matrix::Zero(dim, dim);
  const int qq = dim / 2;
  for (int i = 0; i < qq; ++i) {
    J(dim - 1 - i, i) = 1.0;   // J e_i = e_{2q-1-i}  (0-based)
    J(i, dim - 1 - i) = -1.0;  // J e_{2q-1-i} = -e_i
  }
}

double opnorm(const Matrix& l) {
  if (l.size() == 0) return 0.0;
  return svd_of(l).singularValues()(0);
}

double conorm(const Matrix& l) {
  if (l.rows() != l.cols() || l.rows() == 0)
    throw std::invalid_argument("non-invertible");
  auto svd = svd_of(l);
  const double smax = svd.singularValues()(0);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  if (!(smin > smax * 1e-14) || smax == 0.0)
    throw std::invalid_argument("non-invertible");
  return smin;
}

std::pair<double, double> restricted_norms(const Matrix& l, const Subspace& e) {
  if (e.dim() == 0 || l.cols() != e.ambient_dim())
    throw std::invalid_argument("degenerate");
  auto svd = svd_of(l * e.basis);
  const auto& s = svd.singularValues();
  return {s(0), s(s.size() - 1)};
}

std::pair<Vector, Vector> restricted_extremes(const Matrix& l, const Subspace& e) {
  if (e.dim() == 0 || l.cols() != e.ambient_dim())
    throw std::invalid_argument("degenerate");
  Eigen::JacobiSVD<Matrix> svd(l * e.basis, Eigen::ComputeThinV);
  const int k = e.dim();
  Vector vmax = e.basis * svd.matrixV().col(0);
  Vector vmin = e.basis * svd.matrixV().col(k - 1);
  return {vmax, vmin};
}

double principal_angle(const Subspace& e, const Subspace& f) {
  if (e.ambient_dim() != f.ambient_dim())
    throw std::invalid_argument("degenerate configuration");
  Matrix g = e.basis.transpose() * f.basis;
  double c = opnorm(g);
  return std::acos(clamp01(c));
}

double angle_between(const Vector& v, const Vector& w) {
  const double nv = v.norm();
  const double nw = w.norm();
  if (!(nv > 0.0) || !(nw > 0.0)) throw std::invalid_argument("degenerate pair");
  double c = v.dot(w) / (nv * nw);
  c = std::min(1.0, std::max(-1.0, c));
  return std::acos(c);
}

double sin_angle(const Vector& v, const Vector& w) {
  const double nv = v.norm();
  const double nw = w.norm();
  if (!(nv > 0.0) || !(nw > 0.0)) throw std::invalid_argument("degenerate pair");
  Vector u = v / nv;
  Vector x = w / nw;
  // Distance from u to its projection on the line through x: exact sin of the
  // angle, numerically stable for small angles.
  return std::min(1.0, (u - u.dot(x) * x).norm());
}

double sin_angle(const Vector& v, const Subspace& e) {
  const double nv = v.norm();
  if (!(nv > 0.0)) throw std::invalid_argument("degenerate pair");
  return std::min(1.0, (v - e.project(v)).norm() / nv);
}

double angle_distortion_ratio(const Matrix& l, const Vector& v, const Vector& w) {
  double s0 = sin_angle(v, w);
  if (!(s0 > 1e-12)) throw std::invalid_argument("degenerate pair");
  conorm(l);  // throws "non-invertible" for singular input
  double s1 = sin_angle(Vector(l * v), Vector(l * w));
  return s1 / s0;
}

std::pair<double, double> planar_angle_bound_check(const Matrix& l,
                                                   const Vector& v,
                                                   const Vector& w) {
  if (l.rows() != 2 || l.cols() != 2)
    throw std::invalid_argument("degenerate configuration");
  double s0 = sin_angle(v, w);
  if (!(s0 > 1e-12)) throw std::invalid_argument("degenerate pair");
  const double nrm = opnorm(l);
  const double con = conorm(l);
  Vector lv = l * v;
  Vector lw = l * w;
  double s1 = sin_angle(lv, lw);
  double a = (lv.norm() / v.norm()) / (lw.norm() / w.norm());
  double ratio_max = std::max(a, 1.0 / a);
  double lhs = nrm / con;
  double rhs = 4.0 * ratio_max / (s0 * s1);
  return {lhs, rhs};
}

std::pair<double, double> triple_angle_check(const Subspace& a,
                                             const Subspace& b,
                                             const Subspace& c) {
  Subspace bc = direct_sum(b, c);   // throws "degenerate configuration"
  Subspace ab = direct_sum(a, b);
  double lhs = sin_from_cos(std::cos(principal_angle(a, bc)));
  double r1 = sin_from_cos(std::cos(principal_angle(a, b)));
  double r2 = sin_from_cos(std::cos(principal_angle(ab, c)));
  return {lhs, r1 * r2};
}

std::vector<std::vector<int>> lex_index_sets(int d, int p) {
  std::vector<std::vector<int>> out;
  if (p < 0 || p > d) return out;
  if (p == 0) {
    out.push_back({});
    return out;
  }
  std::vector<int> idx(p);
  for (int i = 0; i < p; ++i) idx[i] = i;
  while (true) {
    out.push_back(idx);
    int i = p - 1;
    while (i >= 0 && idx[i] == d - p + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < p; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

Matrix exterior_power(const Matrix& l, int p) {
  const int d = static_cast<int>(l.rows());
  if (l.cols() != d) throw std::invalid_argument("degenerate");
  if (p < 0 || p > d) throw std::invalid_argument("degenerate");
  auto sets = lex_index_sets(d, p);
  const int n = static_cast<int>(sets.size());
  Matrix out(n, n);
  Matrix minor(p, p);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) minor(i, j) = l(sets[r][i], sets[c][j]);
      out(r, c) = p == 0 ? 1.0 : minor.determinant();
    }
  }
  return out;
}

Vector wedge_coordinates(const Matrix& frame) {
  const int d = static_cast<int>(frame.rows());
  const int p = static_cast<int>(frame.cols());
  auto sets = lex_index_sets(d, p);
  Vector out(static_cast<int>(sets.size()));
  Matrix minor(p, p);
  for (int r = 0; r < static_cast<int>(sets.size()); ++r) {
    for (int i = 0; i < p; ++i) minor.row(i) = frame.row(sets[r][i]);
    out(r) = p == 0 ? 1.0 : minor.determinant();
  }
  return out;
}

double isotropy_defect(const Subspace& e, const SymplecticForm& form) {
  if (e.ambient_dim() != form.dim) throw std::invalid_argument("degenerate");
  Matrix g = (form.J * e.basis).transpose() * e.basis;
  return g.cwiseAbs().maxCoeff();
}

bool is_lagrangian(const Subspace& e, const SymplecticForm& form, double tol) {
  return e.dim() == form.q() && isotropy_defect(e, form) <= tol;
}

std::pair<Vector, double> symplectic_pairing_bound(const Subspace& e,
                                                   const Subspace& f,
                                                   const Vector& v,
                                                   const SymplecticForm& form) {
  if (!is_lagrangian(e, form) || !is_lagrangian(f, form))
    throw std::invalid_argument("not Lagrangian");
  const int d = form.dim;
  Matrix both(d, d);
  both.leftCols(e.dim()) = e.basis;
  both.rightCols(f.dim()) = f.basis;
  auto svd = svd_of(both);
  if (!(svd.singularValues()(d - 1) > 1e-10))
    throw std::invalid_argument("not Lagrangian");
  if (!(v.norm() > 0.0) || sin_angle(v, e) > 1e-8)
    throw std::invalid_argument("degenerate pair");
  Vector jv = form.J * v;
  Vector coeff = both.partialPivLu().solve(jv);
  Vector w = f.basis * coeff.tail(f.dim());
  double ratio = std::abs(form.omega(v, w)) / (v.norm() * w.norm());
  return {w, ratio};
}

Matrix orthonormalize(const Matrix& vectors) {
  const int d = static_cast<int>(vectors.rows());
  const int k = static_cast<int>(vectors.cols());
  if (d == 0 || k == 0 || k > d) throw std::invalid_argument("degenerate");
  Eigen::HouseholderQR<Matrix> qr(vectors);
  Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
  double scale = vectors.colwise().norm().maxCoeff();
  for (int i = 0; i < k; ++i)
    if (!(std::abs(r(i, i)) > scale * 1e-12))
      throw std::invalid_argument("degenerate");
  Matrix q = qr.householderQ() * Matrix::Identity(d, k);
  // Fix signs so the map vectors -> basis is continuous and deterministic.
  for (int i = 0; i < k; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  return q;
}

Subspace direct_sum(const Subspace& a, const Subspace& b) {
  if (a.ambient_dim() != b.ambient_dim())
    throw std::invalid_argument("degenerate configuration");
  const int d = a.ambient_dim();
  const int k = a.dim() + b.dim();
  if (k > d) throw std::invalid_argument("degenerate configuration");
  Matrix both(d, k);
  both.leftCols(a.dim()) = a.basis;
  both.rightCols(b.dim()) = b.basis;
  auto svd = svd_of(both);
  if (!(svd.singularValues()(k - 1) > 1e-10))
    throw std::invalid_argument("degenerate configuration");
  return Subspace(orthonormalize(both));
}

Subspace orthogonal_complement(const Subspace& e) {
  const int d = e.ambient_dim();
  const int k = e.dim();
  if (k >= d) throw std::invalid_argument("degenerate");
  Eigen::HouseholderQR<Matrix> qr(e.basis);
  Matrix full = qr.householderQ() * Matrix::Identity(d, d);
  return Subspace(full.rightCols(d - k));
}

Matrix intersect(const Subspace& a, const Subspace& b, double tol) {
  if (a.ambient_dim() != b.ambient_dim())
    throw std::invalid_argument("degenerate configuration");
  Matrix g = a.basis.transpose() * b.basis;
  Eigen::JacobiSVD<Matrix> svd(g, Eigen::ComputeThinU);
  std::vector<int> keep;
  for (int i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) >= 1.0 - tol) keep.push_back(i);
  Matrix out(a.ambient_dim(), static_cast<int>(keep.size()));
  for (int i = 0; i < static_cast<int>(keep.size()); ++i)
    out.col(i) = a.basis * svd.matrixU().col(keep[i]);
  if (out.cols() > 1) out = orthonormalize(out);
  return out;
}

Matrix rotation_between(const Vector& v, const Vector& w) {
  const double nv = v.norm();
  const double nw = w.norm();
  if (!(nv > 0.0) || !(nw > 0.0)) throw std::invalid_argument("degenerate pair");
  const int d = static_cast<int>(v.size());
  Vector u = v / nv;
  Vector x = w / nw;
  if (u.dot(x) < 0) x = -x;  // direction semantics: target the nearer sign
  const double c = std::min(1.0, u.dot(x));
  Vector braw = x - c * u;
  const double s = braw.norm();
  if (s <= 1e-15) return Matrix::Identity(d, d);
  Vector bb = braw / s;
  Matrix r = Matrix::Identity(d, d);
  r += (c - 1.0) * (u * u.transpose() + bb * bb.transpose());
  r += s * (bb * u.transpose() - u * bb.transpose());
  return r;
}

Matrix plane_rotation(const Vector& p, const Vector& q, double theta) {
  const int d = static_cast<int>(p.size());
  if (std::abs(p.norm() - 1.0) > 1e-8 || std::abs(q.norm() - 1.0) > 1e-8 ||
      std::abs(p.dot(q)) > 1e-8)
    throw std::invalid_argument("degenerate pair");
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Matrix r = Matrix::Identity(d, d);
  r += (c - 1.0) * (p * p.transpose() + q * q.transpose());
  r += s * (q * p.transpose() - p * q.transpose());
  return r;
}

Matrix plane_rotation(int dim, int i, int j, double theta) {
  if (dim < 2 || i < 0 || j < 0 || i >= dim || j >= dim || i == j)
    throw std::invalid_argument("degenerate pair");
  Vector p = Vector::Zero(dim), q = Vector::Zero(dim);
  p[i] = 1.0;
  q[j] = 1.0;
  return plane_rotation(p, q, theta);
}

void signed_qr(const Matrix& b, Matrix& q, Matrix& r) {
  Eigen::HouseholderQR<Matrix> qr(b);
  q = qr.householderQ();
  r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < r.rows(); ++i) {
    if (r(i, i) < 0) {
      r.row(i) = -r.row(i);
      q.col(i) = -q.col(i);
    }
  }
}

Matrix special_linear_reproject(const Matrix& m) {
  const int d = static_cast<int>(m.rows());
  if (d == 0 || m.cols() != d) throw std::invalid_argument("degenerate");
  const double det = m.determinant();
  if (!(std::abs(det) > 1e-300)) throw std::invalid_argument("non-invertible");
  return m * std::pow(std::abs(det), -1.0 / d);
}

}  // namespace cocycle
