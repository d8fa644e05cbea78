#include "cocycle/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cocycle/util.hpp"

namespace cocycle {

namespace {

constexpr double kOrthoTol = 1e-9;

Matrix rot2(double angle) {
  Matrix r(2, 2);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  r << c, -s, s, c;
  return r;
}

// Derivative of the planar rotation with respect to its angle.
Matrix rot2_prime(double angle) {
  Matrix r(2, 2);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  r << -s, -c, c, -s;
  return r;
}

void require(bool ok, const char* message) {
  if (!ok) throw std::runtime_error(message);
}

bool orthonormal_columns(const Matrix& m) {
  if (m.cols() == 0) return true;
  Matrix gram = m.transpose() * m;
  gram -= Matrix::Identity(m.cols(), m.cols());
  return gram.cwiseAbs().maxCoeff() <= kOrthoTol;
}

// Symmetric positive-definite check plus the principal square root and the
// largest eigenvalue square root (the normalizer norm).
struct FormRoot {
  Matrix root;
  double norm = 0.0;
};

FormRoot form_root(const Matrix& q) {
  FormRoot out;
  if (q.rows() == 0) {
    out.root = Matrix(0, 0);
    return out;
  }
  require(q.rows() == q.cols(), "degenerate");
  require((q - q.transpose()).cwiseAbs().maxCoeff() <= kOrthoTol, "degenerate");
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (q + q.transpose()));
  require(es.info() == Eigen::Success, "degenerate");
  const Vector ev = es.eigenvalues();
  require(ev.minCoeff() > 0.0, "degenerate");
  out.root = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
             es.eigenvectors().transpose();
  out.norm = std::sqrt(ev.maxCoeff());
  return out;
}

// --- complex <-> interleaved real helpers -------------------------------

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

CVector to_complex(const Vector& z) {
  const int q = static_cast<int>(z.size()) / 2;
  CVector w(q);
  for (int k = 0; k < q; ++k) w(k) = std::complex<double>(z(2 * k), z(2 * k + 1));
  return w;
}

Vector to_real(const CVector& w) {
  const int q = static_cast<int>(w.size());
  Vector z(2 * q);
  for (int k = 0; k < q; ++k) {
    z(2 * k) = w(k).real();
    z(2 * k + 1) = w(k).imag();
  }
  return z;
}

// Real 2q x 2q matrix of a complex-linear map.
Matrix to_real_matrix(const CMatrix& c) {
  const int q = static_cast<int>(c.rows());
  Matrix m(2 * q, 2 * q);
  for (int k = 0; k < q; ++k) {
    for (int l = 0; l < q; ++l) {
      const double re = c(k, l).real();
      const double im = c(k, l).imag();
      m(2 * k, 2 * l) = re;
      m(2 * k, 2 * l + 1) = -im;
      m(2 * k + 1, 2 * l) = im;
      m(2 * k + 1, 2 * l + 1) = re;
    }
  }
  return m;
}

// Eigenvalue arguments and the unitary eigenbasis of an orthogonal
// symplectic matrix, via the complex Schur form of its complex compression.
struct UnitaryEigen {
  std::vector<double> theta;
  CMatrix basis;  // unitary q x q
};

UnitaryEigen unitary_eigen(const Matrix& r) {
  const int d = static_cast<int>(r.rows());
  require(d >= 2 && d % 2 == 0 && r.cols() == d, "degenerate");
  require(r.allFinite(), "degenerate");
  const int q = d / 2;
  const Matrix j = pair_form(q);
  require((r.transpose() * r - Matrix::Identity(d, d)).cwiseAbs().maxCoeff() <=
              1e-8,
          "degenerate");
  require((r.transpose() * j * r - j).cwiseAbs().maxCoeff() <= 1e-8,
          "degenerate");
  CMatrix c(q, q);
  for (int k = 0; k < q; ++k)
    for (int l = 0; l < q; ++l)
      c(k, l) = std::complex<double>(r(2 * k, 2 * l), r(2 * k + 1, 2 * l));
  Eigen::ComplexSchur<CMatrix> schur(c);
  require(schur.info() == Eigen::Success, "degenerate");
  const CMatrix t = schur.matrixT();
  // A unitary matrix is normal, so the Schur form must be diagonal.
  for (int k = 0; k < q; ++k)
    for (int l = k + 1; l < q; ++l)
      require(std::abs(t(k, l)) <= 1e-8, "degenerate");
  UnitaryEigen out;
  out.basis = schur.matrixU();
  out.theta.resize(q);
  for (int k = 0; k < q; ++k) out.theta[k] = std::arg(t(k, k));
  return out;
}

// Closed-form single-sign kernel in diagonal (eigenbasis) coordinates:
// h_k(w) = exp(i theta_k tau(H(w))) w_k with H(w) = 1/2 sum |theta_k| |w_k|^2
// and the plateau cutoff tau = 1 below sigma^2, 0 above 1.
struct DiagKernel {
  std::vector<double> theta;
  std::vector<double> coef;  // |theta|
  double sigma = 0.5;

  double energy(const Vector& w) const {
    double s = 0.0;
    for (std::size_t k = 0; k < coef.size(); ++k)
      s += 0.5 * coef[k] *
           (w(2 * k) * w(2 * k) + w(2 * k + 1) * w(2 * k + 1));
    return s;
  }

  Vector value(const Vector& w) const {
    const double s = energy(w);
    if (s >= 1.0) return w;
    const double u = plateau_bump(s, sigma * sigma, 1.0);
    Vector out(w.size());
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double c = std::cos(theta[k] * u);
      const double sn = std::sin(theta[k] * u);
      out(2 * k) = c * w(2 * k) - sn * w(2 * k + 1);
      out(2 * k + 1) = sn * w(2 * k) + c * w(2 * k + 1);
    }
    return out;
  }

  Matrix jacobian(const Vector& w) const {
    const int d = static_cast<int>(w.size());
    const double s = energy(w);
    if (s >= 1.0) return Matrix::Identity(d, d);
    const double u = plateau_bump(s, sigma * sigma, 1.0);
    const double du = plateau_bump_d1(s, sigma * sigma, 1.0);
    Matrix m = Matrix::Zero(d, d);
    Vector g(d);      // d/du of the rotated point, times theta_k
    Vector grad(d);   // gradient of H
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double c = std::cos(theta[k] * u);
      const double sn = std::sin(theta[k] * u);
      m(2 * k, 2 * k) = c;
      m(2 * k, 2 * k + 1) = -sn;
      m(2 * k + 1, 2 * k) = sn;
      m(2 * k + 1, 2 * k + 1) = c;
      // i theta e^{i theta u} w as a real pair.
      const double rx = c * w(2 * k) - sn * w(2 * k + 1);
      const double ry = sn * w(2 * k) + c * w(2 * k + 1);
      g(2 * k) = -theta[k] * ry;
      g(2 * k + 1) = theta[k] * rx;
      grad(2 * k) = coef[k] * w(2 * k);
      grad(2 * k + 1) = coef[k] * w(2 * k + 1);
    }
    m += du * g * grad.transpose();
    return m;
  }
};

}  // namespace

double plateau_bump(double t, double lo, double hi) {
  if (t <= lo) return 1.0;
  if (t >= hi) return 0.0;
  const double s = (t - lo) / (hi - lo);
  return 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

double plateau_bump_d1(double t, double lo, double hi) {
  if (t <= lo || t >= hi) return 0.0;
  const double w = hi - lo;
  const double s = (t - lo) / w;
  return -30.0 * s * s * (1.0 - s) * (1.0 - s) / w;
}

double plateau_bump_d2(double t, double lo, double hi) {
  if (t <= lo || t >= hi) return 0.0;
  const double w = hi - lo;
  const double s = (t - lo) / w;
  return -60.0 * s * (1.0 - s) * (1.0 - 2.0 * s) / (w * w);
}

Matrix pair_form(int q) {
  Matrix j = Matrix::Zero(2 * q, 2 * q);
  for (int k = 0; k < q; ++k) {
    j(2 * k, 2 * k + 1) = -1.0;
    j(2 * k + 1, 2 * k) = 1.0;
  }
  return j;
}

double kernel_epsilon(double eps0, double sigma) {
  require(eps0 > 0.0 && sigma > 0.0 && sigma < 1.0, "degenerate");
  // The transition estimate consumes 18 eps / (1 - sigma). Cap the result
  // at 1/2 so the extracted rotation angle stays small enough for the
  // angle-versus-sine comparison used by that estimate.
  return std::min(eps0 * (1.0 - sigma) / 18.0, 0.5);
}

KernelMap volume_kernel(const CylinderSpec& spec) {
  const int d = spec.dim;
  require(d >= 2, "degenerate");
  require(spec.axis.rows() == d && spec.axis.cols() == d - 2, "degenerate");
  require(spec.plane.rows() == d && spec.plane.cols() == 2, "degenerate");
  require(spec.axis.allFinite() && spec.plane.allFinite(), "degenerate");
  require(orthonormal_columns(spec.axis), "degenerate");
  require(orthonormal_columns(spec.plane), "degenerate");
  if (d > 2)
    require((spec.axis.transpose() * spec.plane).cwiseAbs().maxCoeff() <=
                kOrthoTol,
            "degenerate");
  require(spec.eccentricity >= 1.0, "degenerate");
  require(spec.radius > 0.0, "degenerate");
  require(spec.scale_a > 0.0 && spec.scale_b > 0.0, "degenerate");
  require(spec.shrink > 0.0 && spec.shrink < 1.0, "degenerate");
  require(std::isfinite(spec.angle), "degenerate");
  require(spec.axis_form.rows() == d - 2 && spec.axis_form.cols() == d - 2,
          "degenerate");

  const FormRoot root = form_root(spec.axis_form);
  require(spec.scale_a > root.norm * spec.scale_b, "cylinder not thin enough");

  const Matrix axis = spec.axis;
  const Matrix plane = spec.plane;
  const Matrix q_form = d > 2
                            ? Matrix(0.5 * (spec.axis_form +
                                            spec.axis_form.transpose()))
                            : Matrix(0, 0);
  const double lambda = spec.eccentricity;
  const double rho = spec.radius;
  const double a = spec.scale_a;
  const double b = spec.scale_b;
  const double sigma = spec.shrink;
  const double alpha = spec.angle;
  const double br = b * rho;

  // Ellipse-normalized plane coordinates: w = H_lambda^{-1} y / (b rho).
  auto to_disk = [lambda, br](const Vector& y) {
    Vector w(2);
    w(0) = y(0) / (lambda * br);
    w(1) = y(1) * lambda / br;
    return w;
  };

  auto axis_level = [axis, q_form, a, d](const Vector& z, Vector* u_out) {
    if (d == 2) {
      if (u_out) *u_out = Vector(0);
      return 0.0;
    }
    Vector u = axis.transpose() * z;
    if (u_out) *u_out = u;
    return u.dot(q_form * u) / (a * a);
  };

  KernelMap map;
  map.dim = d;

  map.value = [axis_level, to_disk, plane, lambda, br, sigma,
               alpha](const Vector& z) {
    const double t = axis_level(z, nullptr);
    const Vector y = plane.transpose() * z;
    const Vector w = to_disk(y);
    const double r2 = w.squaredNorm();
    const double theta =
        alpha * plateau_bump(t, sigma, 1.0) * plateau_bump(r2, sigma, 1.0);
    if (theta == 0.0) return z;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    Vector g(2);
    g(0) = (c * w(0) - s * w(1)) * lambda * br;
    g(1) = (s * w(0) + c * w(1)) * br / lambda;
    return Vector(z + plane * (g - y));
  };

  map.jacobian = [axis_level, to_disk, axis, plane, q_form, lambda, br, a,
                  sigma, alpha, d](const Vector& z) {
    Vector u;
    const double t = axis_level(z, &u);
    const Vector y = plane.transpose() * z;
    const Vector w = to_disk(y);
    const double r2 = w.squaredNorm();
    const double pt = plateau_bump(t, sigma, 1.0);
    const double pr = plateau_bump(r2, sigma, 1.0);
    const double theta = alpha * pt * pr;
    const double dpt = plateau_bump_d1(t, sigma, 1.0);
    const double dpr = plateau_bump_d1(r2, sigma, 1.0);
    // theta vanishes only when a factor sits on a flat plateau (or the
    // angle is zero globally), so the angle gradient vanishes with it.
    if (theta == 0.0) return Matrix(Matrix::Identity(d, d));

    Matrix hl(2, 2), hli(2, 2);
    hl << lambda, 0.0, 0.0, 1.0 / lambda;
    hli << 1.0 / lambda, 0.0, 0.0, lambda;
    const Matrix core = hl * (rot2(theta) - Matrix::Identity(2, 2)) * hli;

    // Gradient of the rotation angle in ambient coordinates.
    Vector dtheta = Vector::Zero(d);
    if (alpha != 0.0) {
      if (dpt != 0.0 && pr != 0.0 && d > 2)
        dtheta += (alpha * dpt * pr * 2.0 / (a * a)) * (axis * (q_form * u));
      if (dpr != 0.0 && pt != 0.0) {
        Vector dr2(2);
        dr2(0) = 2.0 * w(0) / (lambda * br);
        dr2(1) = 2.0 * w(1) * lambda / br;
        dtheta += (alpha * pt * dpr) * (plane * dr2);
      }
    }

    Vector dg(2);  // d/dtheta of the rotated ellipse point, plane coords
    {
      const Matrix rp = rot2_prime(theta);
      Vector rw = rp * w;
      dg(0) = rw(0) * lambda * br;
      dg(1) = rw(1) * br / lambda;
    }

    Matrix jac = Matrix::Identity(d, d);
    jac += plane * core * plane.transpose();
    jac += (plane * dg) * dtheta.transpose();
    return jac;
  };

  {
    Matrix hl(2, 2), hli(2, 2);
    hl << lambda, 0.0, 0.0, 1.0 / lambda;
    hli << 1.0 / lambda, 0.0, 0.0, lambda;
    const Matrix rhat = hl * rot2(alpha) * hli;
    map.inner_map = Matrix::Identity(d, d) -
                    plane * plane.transpose() +
                    plane * rhat * plane.transpose();
  }

  const double s2 = sigma * sigma;
  map.region = [axis_level, to_disk, plane, s2](const Vector& z) {
    const double t = axis_level(z, nullptr);
    const Vector w = to_disk(plane.transpose() * z);
    const double r2 = w.squaredNorm();
    if (t >= 1.0 || r2 >= 1.0) return -1;
    if (t <= s2 && r2 <= s2) return 1;
    return 0;
  };

  map.domain = [axis_level, to_disk, plane](const Vector& z) {
    const double t = axis_level(z, nullptr);
    const Vector w = to_disk(plane.transpose() * z);
    return t <= 4.0 && w.squaredNorm() <= 4.0;
  };

  map.frame = Matrix(d, d);
  map.box_half = Vector(d);
  if (d > 2) {
    map.frame.leftCols(d - 2) = axis;
    const Matrix qinv = q_form.inverse();
    for (int i = 0; i < d - 2; ++i)
      map.box_half(i) = 2.0 * a * std::sqrt(qinv(i, i));
  }
  map.frame.rightCols(2) = plane;
  map.box_half(d - 2) = 2.0 * br * lambda;
  map.box_half(d - 1) = 2.0 * br / lambda;

  map.form = Matrix(0, 0);
  map.inner_tol = 1e-10;
  return map;
}

KernelMap unitary_kernel(const Matrix& r, double shrink) {
  require(shrink > 0.0 && shrink < 1.0, "degenerate");
  const UnitaryEigen eig = unitary_eigen(r);
  const int q = static_cast<int>(eig.theta.size());
  const int d = 2 * q;

  bool has_pos = false;
  bool has_neg = false;
  double max_abs = 0.0;
  for (double t : eig.theta) {
    if (t > 1e-14) has_pos = true;
    if (t < -1e-14) has_neg = true;
    max_abs = std::max(max_abs, std::abs(t));
  }
  require(!(has_pos && has_neg), "use composite kernel");

  KernelMap map;
  map.dim = d;
  map.form = pair_form(q);
  map.inner_map = r;
  map.inner_tol = 1e-10;

  if (max_abs <= 1e-14) {
    // Identity rotation: the kernel is the identity with empty support.
    map.value = [](const Vector& z) { return z; };
    map.jacobian = [d](const Vector&) {
      return Matrix(Matrix::Identity(d, d));
    };
    map.region = [](const Vector&) { return -1; };
    map.domain = [](const Vector&) { return true; };
    map.frame = Matrix::Identity(d, d);
    map.box_half = Vector::Constant(d, 1.0);
    return map;
  }

  DiagKernel diag;
  diag.sigma = shrink;
  diag.theta = eig.theta;
  diag.coef.resize(q);
  for (int k = 0; k < q; ++k) diag.coef[k] = std::abs(eig.theta[k]);

  const Matrix basis = to_real_matrix(eig.basis);

  map.value = [diag, basis](const Vector& z) {
    const Vector w = basis.transpose() * z;
    if (diag.energy(w) >= 1.0) return z;
    return Vector(basis * diag.value(w));
  };

  map.jacobian = [diag, basis, d](const Vector& z) {
    const Vector w = basis.transpose() * z;
    if (diag.energy(w) >= 1.0) return Matrix(Matrix::Identity(d, d));
    return Matrix(basis * diag.jacobian(w) * basis.transpose());
  };

  const double s2 = shrink * shrink;
  map.region = [diag, basis, s2](const Vector& z) {
    const double s = diag.energy(basis.transpose() * z);
    if (s >= 1.0) return -1;
    if (s <= s2) return 1;
    return 0;
  };

  map.domain = [diag, basis](const Vector& z) {
    return diag.energy(basis.transpose() * z) <= 4.0;
  };

  map.frame = basis;
  map.box_half = Vector(d);
  double max_semi = 0.0;
  for (int k = 0; k < q; ++k)
    if (diag.coef[k] > 0.0)
      max_semi = std::max(max_semi, std::sqrt(2.0 / diag.coef[k]));
  for (int k = 0; k < q; ++k) {
    const double semi =
        diag.coef[k] > 0.0 ? std::sqrt(2.0 / diag.coef[k]) : max_semi;
    map.box_half(2 * k) = 2.0 * semi;
    map.box_half(2 * k + 1) = 2.0 * semi;
  }
  return map;
}

CompositeKernel composite_unitary_kernel(const Matrix& r, double shrink) {
  require(shrink > 0.0 && shrink < 1.0, "degenerate");
  const UnitaryEigen eig = unitary_eigen(r);
  const int q = static_cast<int>(eig.theta.size());
  const int d = 2 * q;

  double max_abs = 0.0;
  for (double t : eig.theta) max_abs = std::max(max_abs, std::abs(t));
  require(max_abs > 1e-14, "degenerate");

  // Single-sign factors with a shared eigenbasis: r = r_plus * r_minus.
  const double split = max_abs / 100.0;
  DiagKernel plus;
  DiagKernel minus;
  plus.sigma = shrink;
  minus.sigma = shrink;
  plus.theta.resize(q);
  minus.theta.resize(q);
  plus.coef.resize(q);
  minus.coef.resize(q);
  for (int k = 0; k < q; ++k) {
    const double t = eig.theta[k];
    plus.theta[k] = t > 0.0 ? t + split : split;
    minus.theta[k] = t > 0.0 ? -split : t - split;
    plus.coef[k] = std::abs(plus.theta[k]);
    minus.coef[k] = std::abs(minus.theta[k]);
  }

  // Semi-axes (per complex pair) of the base region U = {H_plus < 1} and of
  // the packed copy shape {H_minus < 1}.
  Vector semi_plus(q), semi_minus(q);
  for (int k = 0; k < q; ++k) {
    semi_plus(k) = std::sqrt(2.0 / plus.coef[k]);
    semi_minus(k) = std::sqrt(2.0 / minus.coef[k]);
  }
  const double copy_max = semi_minus.maxCoeff();

  auto energy_at = [q](const DiagKernel& kern, const Vector& w,
                       const Vector& center, double scale) {
    double s = 0.0;
    for (int k = 0; k < q; ++k) {
      const double dx = (w(2 * k) - center(2 * k)) / scale;
      const double dy = (w(2 * k + 1) - center(2 * k + 1)) / scale;
      s += 0.5 * kern.coef[k] * (dx * dx + dy * dy);
    }
    return s;
  };

  // Deterministic dyadic packing of U by scaled copies of the minus region.
  std::vector<Vector> centers;
  std::vector<double> scales;
  double unit_ball = std::pow(M_PI, q);
  for (int k = 2; k <= q; ++k) unit_ball /= k;
  double vol_plus = unit_ball;
  double vol_minus = unit_ball;
  for (int k = 0; k < q; ++k) {
    vol_plus *= semi_plus(k) * semi_plus(k);
    vol_minus *= semi_minus(k) * semi_minus(k);
  }
  const double target = std::min(0.97, std::pow(shrink, d) + 0.02);
  double covered = 0.0;

  const double box = semi_plus.maxCoeff();
  const int max_level = q == 1 ? 8 : 4;
  for (int level = 0; level <= max_level && covered < target; ++level) {
    const double delta = box / std::pow(2.0, level);
    std::vector<int> counts(d);
    std::vector<int> index(d, 0);
    long total = 1;
    for (int i = 0; i < d; ++i) {
      counts[i] =
          static_cast<int>(std::ceil(2.0 * semi_plus(i / 2) / delta));
      total *= counts[i];
    }
    for (long cell = 0; cell < total && covered < target; ++cell) {
      long rem = cell;
      Vector lo(d), hi(d);
      for (int i = 0; i < d; ++i) {
        const int ci = static_cast<int>(rem % counts[i]);
        rem /= counts[i];
        lo(i) = -semi_plus(i / 2) + ci * delta;
        hi(i) = lo(i) + delta;
      }
      // The cell must sit inside U: the quadratic energy is maximized at
      // the corner farthest from the origin in each coordinate.
      double worst = 0.0;
      for (int i = 0; i < d; ++i) {
        const double m = std::max(std::abs(lo(i)), std::abs(hi(i)));
        worst += 0.5 * plus.coef[i / 2] * m * m;
      }
      if (worst >= 1.0) continue;
      const double scale = delta / (2.0 * copy_max);
      Vector center(d);
      for (int i = 0; i < d; ++i) center(i) = 0.5 * (lo(i) + hi(i));
      // Disjointness from every placed copy: a cheap bounding-box reject,
      // then clamp the copy's center into the cell and test the boundary
      // level of the copy's quadratic there.
      bool free_cell = true;
      for (std::size_t p = 0; p < centers.size() && free_cell; ++p) {
        bool overlap_box = true;
        for (int i = 0; i < d && overlap_box; ++i) {
          const double reach = scales[p] * semi_minus(i / 2);
          if (centers[p](i) + reach <= lo(i) ||
              centers[p](i) - reach >= hi(i))
            overlap_box = false;
        }
        if (!overlap_box) continue;
        Vector nearest(d);
        for (int i = 0; i < d; ++i)
          nearest(i) = std::clamp(centers[p](i), lo(i), hi(i));
        if (energy_at(minus, nearest, centers[p], scales[p]) < 1.0)
          free_cell = false;
      }
      if (!free_cell) continue;
      centers.push_back(center);
      scales.push_back(scale);
      covered += std::pow(scale, d) * vol_minus / vol_plus;
    }
  }

  const Matrix basis = to_real_matrix(eig.basis);
  const double s2 = shrink * shrink;

  auto locate = [energy_at, minus](const std::vector<Vector>& cs,
                                   const std::vector<double>& ss,
                                   const Vector& w) {
    for (std::size_t i = 0; i < cs.size(); ++i)
      if (energy_at(minus, w, cs[i], ss[i]) < 1.0)
        return static_cast<long>(i);
    return static_cast<long>(-1);
  };

  CompositeKernel out;
  out.centers = centers;
  out.scales = scales;
  out.covered_fraction = covered;

  out.map.dim = d;
  out.map.form = pair_form(q);
  out.map.inner_map = r;
  out.map.inner_tol = 1e-8;
  out.map.inner_is_derivative = true;

  out.map.value = [plus, minus, basis, centers, scales,
                   locate](const Vector& z) {
    const Vector w = basis.transpose() * z;
    if (plus.energy(w) >= 1.0) return z;
    Vector mid = w;
    const long i = locate(centers, scales, w);
    if (i >= 0) {
      const Vector local = (w - centers[i]) / scales[i];
      mid = centers[i] + scales[i] * minus.value(local);
    }
    return Vector(basis * plus.value(mid));
  };

  out.map.jacobian = [plus, minus, basis, centers, scales, locate,
                      d](const Vector& z) {
    const Vector w = basis.transpose() * z;
    if (plus.energy(w) >= 1.0) return Matrix(Matrix::Identity(d, d));
    Vector mid = w;
    Matrix inner = Matrix::Identity(d, d);
    const long i = locate(centers, scales, w);
    if (i >= 0) {
      const Vector local = (w - centers[i]) / scales[i];
      mid = centers[i] + scales[i] * minus.value(local);
      inner = minus.jacobian(local);
    }
    return Matrix(basis * plus.jacobian(mid) * inner * basis.transpose());
  };

  auto kept_w = [plus, minus, centers, scales, locate, s2](const Vector& w) {
    if (plus.energy(w) >= s2) return false;
    const long i = locate(centers, scales, w);
    if (i < 0) return false;
    const Vector local = (w - centers[i]) / scales[i];
    if (minus.energy(local) >= s2) return false;
    const Vector mid = centers[i] + scales[i] * minus.value(local);
    return plus.energy(mid) <= s2;
  };

  out.base = [plus, basis](const Vector& z) {
    return plus.energy(basis.transpose() * z) < 1.0;
  };
  out.kept = [kept_w, basis](const Vector& z) {
    return kept_w(basis.transpose() * z);
  };

  out.map.region = [plus, kept_w, basis](const Vector& z) {
    const Vector w = basis.transpose() * z;
    if (plus.energy(w) >= 1.0) return -1;
    if (kept_w(w)) return 1;
    return 0;
  };
  out.map.domain = [plus, basis](const Vector& z) {
    return plus.energy(basis.transpose() * z) <= 4.0;
  };
  out.map.frame = basis;
  out.map.box_half = Vector(d);
  for (int k = 0; k < q; ++k) {
    out.map.box_half(2 * k) = 2.0 * semi_plus(k);
    out.map.box_half(2 * k + 1) = 2.0 * semi_plus(k);
  }
  return out;
}

KernelMap symplectic_cylinder_kernel(const Matrix& axis, const Matrix& plane,
                                     const Matrix& axis_form, double a,
                                     double b, double shrink, double t0) {
  const int d = static_cast<int>(plane.rows());
  require(d >= 2 && d % 2 == 0, "degenerate");
  require(plane.cols() == 2, "degenerate");
  require(axis.rows() == d && axis.cols() == d - 2, "degenerate");
  require(axis.allFinite() && plane.allFinite(), "degenerate");
  require(orthonormal_columns(axis) && orthonormal_columns(plane),
          "degenerate");
  if (d > 2)
    require((axis.transpose() * plane).cwiseAbs().maxCoeff() <= kOrthoTol,
            "degenerate");
  require(a > 0.0 && b > 0.0, "degenerate");
  require(shrink > 0.0 && shrink < 1.0, "degenerate");
  require(std::isfinite(t0), "degenerate");
  require(axis_form.rows() == d - 2 && axis_form.cols() == d - 2,
          "degenerate");

  const Matrix j = pair_form(d / 2);
  // Y must be symplectically invariant: for an orthonormal basis this means
  // omega(y1, y2) = +-1, which also forces X = Y-perp to satisfy X^omega = Y.
  const double orient = (j * plane.col(0)).dot(plane.col(1));
  require(std::abs(std::abs(orient) - 1.0) <= 1e-9, "degenerate");

  const FormRoot root = form_root(axis_form);
  require(a > root.norm * b, "cylinder not thin enough");

  const Matrix a_root = root.root;
  const double sigma = shrink;

  // rho(s) = integral of the plateau bump from 0: identity below sigma,
  // constant (1 + sigma) / 2 above 1.
  auto rho = [sigma](double s) {
    if (s <= sigma) return s;
    const double w = 1.0 - sigma;
    if (s >= 1.0) return sigma + 0.5 * w;
    const double u = (s - sigma) / w;
    const double u4 = u * u * u * u;
    return s - w * (2.5 * u4 - 3.0 * u4 * u + u4 * u * u);
  };
  const double plateau_c = 0.5 * b * b * rho(2.0) * rho(2.0);

  struct Hamiltonian {
    Matrix axis, plane, a_root;
    double a, b, sigma, c;
    int d;

    // Gradient of the cut-off energy in ambient coordinates, plus the
    // Hessian when requested.
    void eval(const Vector& z, Vector* grad, Matrix* hess) const {
      const Vector y = plane.transpose() * z;
      const double ny = y.norm();
      const double sy = ny / b;

      // Plane part: exact quadratic inside, plateau outside.
      double phi;
      Vector dphi(2);
      Matrix hphi = Matrix::Zero(2, 2);
      if (sy <= sigma) {
        phi = 0.5 * ny * ny;
        dphi = y;
        hphi = Matrix::Identity(2, 2);
      } else {
        const double r = rho_val(sy);
        const double rp = plateau_bump(sy, sigma, 1.0);
        const double rpp = plateau_bump_d1(sy, sigma, 1.0);
        phi = 0.5 * b * b * r * r;
        if (rp == 0.0) {
          dphi.setZero();
        } else {
          dphi = (b * r * rp / ny) * y;
        }
        if (hess) {
          const Vector yh = y / ny;
          hphi = (rp * rp + r * rpp) * (yh * yh.transpose()) +
                 (b * r * rp / ny) *
                     (Matrix::Identity(2, 2) - yh * yh.transpose());
        }
      }

      // Axis part.
      double psi = 1.0;
      Vector dpsi(d - 2);
      dpsi.setZero();
      Matrix hpsi = Matrix::Zero(d - 2, d - 2);
      if (d > 2) {
        const Vector u = axis.transpose() * z;
        const Vector au = a_root * u;
        const double na = au.norm();
        const double su = na / a;
        psi = plateau_bump(su, sigma, 1.0);
        if (su > sigma && su < 1.0) {
          const double z1 = plateau_bump_d1(su, sigma, 1.0);
          const Vector grad_n = (a_root * au) / na;
          dpsi = (z1 / a) * grad_n;
          if (hess) {
            const double z2 = plateau_bump_d2(su, sigma, 1.0);
            hpsi = (z2 / (a * a)) * (grad_n * grad_n.transpose()) +
                   (z1 / (a * na)) *
                       (a_root * a_root - grad_n * grad_n.transpose());
          }
        }
      }

      const double gap = c - phi;
      if (grad) {
        Vector g = plane * (psi * dphi);
        if (d > 2) g.noalias() += axis * (-gap * dpsi);
        *grad = g;
      }
      if (hess) {
        Matrix h = plane * (psi * hphi) * plane.transpose();
        if (d > 2) {
          h.noalias() += axis * (-gap * hpsi) * axis.transpose();
          const Matrix cross =
              (axis * dpsi) * (plane * dphi).transpose();
          h.noalias() += cross + cross.transpose();
        }
        *hess = h;
      }
    }

    double rho_val(double s) const {
      if (s <= sigma) return s;
      const double w = 1.0 - sigma;
      if (s >= 1.0) return sigma + 0.5 * w;
      const double u = (s - sigma) / w;
      const double u4 = u * u * u * u;
      return s - w * (2.5 * u4 - 3.0 * u4 * u + u4 * u * u);
    }
  };

  Hamiltonian ham;
  ham.axis = axis;
  ham.plane = plane;
  ham.a_root = a_root;
  ham.a = a;
  ham.b = b;
  ham.sigma = sigma;
  ham.c = plateau_c;
  ham.d = d;

  const Matrix form = j;

  // Adaptive Dormand-Prince integration of dz/dt = J grad(H), optionally
  // with the variational equations dD/dt = J Hess(H) D.
  auto integrate = [ham, form, t0, d](const Vector& z0, bool with_jacobian,
                                      Matrix* jac_out) {
    static const double ba[7][6] = {
        {0, 0, 0, 0, 0, 0},
        {1.0 / 5, 0, 0, 0, 0, 0},
        {3.0 / 40, 9.0 / 40, 0, 0, 0, 0},
        {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
         -5103.0 / 18656, 0},
        {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784,
         11.0 / 84}};
    static const double b5[7] = {35.0 / 384,     0, 500.0 / 1113, 125.0 / 192,
                                 -2187.0 / 6784, 11.0 / 84,       0};
    static const double b4[7] = {5179.0 / 57600,   0,
                                 7571.0 / 16695,   393.0 / 640,
                                 -92097.0 / 339200, 187.0 / 2100,
                                 1.0 / 40};

    Vector z = z0;
    Matrix dmat = Matrix::Identity(d, d);
    if (t0 == 0.0) {
      if (jac_out) *jac_out = dmat;
      return z;
    }
    const double dir = t0 > 0.0 ? 1.0 : -1.0;
    double t = 0.0;
    double h = dir * std::max(std::abs(t0) / 100.0, 1e-8);
    const double rtol = 1e-11;
    const double atol = 1e-13;
    int steps = 0;
    const int max_steps = 200000;

    auto rhs = [&ham, &form, with_jacobian](const Vector& zc,
                                            const Matrix& dc, Vector* fz,
                                            Matrix* fd) {
      Vector grad;
      Matrix hess;
      ham.eval(zc, &grad, with_jacobian ? &hess : nullptr);
      *fz = form * grad;
      if (with_jacobian) *fd = form * hess * dc;
    };

    Vector kz[7];
    Matrix kd[7];
    bool done = false;
    while (!done) {
      if (++steps > max_steps)
        throw std::runtime_error("flow integration failed");
      bool final_step = false;
      if (dir * (t + h) >= dir * t0) {
        h = t0 - t;
        final_step = true;
      }
      for (int s = 0; s < 7; ++s) {
        Vector zs = z;
        Matrix ds;
        if (with_jacobian) ds = dmat;
        for (int l = 0; l < s; ++l) {
          if (ba[s][l] == 0.0) continue;
          zs.noalias() += (h * ba[s][l]) * kz[l];
          if (with_jacobian) ds.noalias() += (h * ba[s][l]) * kd[l];
        }
        rhs(zs, ds, &kz[s], with_jacobian ? &kd[s] : nullptr);
      }
      Vector z5 = z;
      Vector z4 = z;
      Matrix d5;
      if (with_jacobian) d5 = dmat;
      for (int s = 0; s < 7; ++s) {
        if (b5[s] != 0.0) {
          z5.noalias() += (h * b5[s]) * kz[s];
          if (with_jacobian) d5.noalias() += (h * b5[s]) * kd[s];
        }
        if (b4[s] != 0.0) z4.noalias() += (h * b4[s]) * kz[s];
      }
      double err = 0.0;
      for (int i = 0; i < d; ++i) {
        const double scale =
            atol + rtol * std::max(std::abs(z(i)), std::abs(z5(i)));
        err = std::max(err, std::abs(z5(i) - z4(i)) / scale);
      }
      if (err <= 1.0) {
        t = final_step ? t0 : t + h;
        z = z5;
        if (with_jacobian) dmat = d5;
        done = final_step;
      }
      if (!done) {
        const double factor = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 5.0;
        h *= std::clamp(factor, 0.2, 5.0);
        if (std::abs(h) < 1e-14)
          throw std::runtime_error("flow integration failed");
      }
    }
    if (jac_out) *jac_out = dmat;
    return z;
  };

  KernelMap map;
  map.dim = d;
  map.form = form;

  map.value = [integrate](const Vector& z) {
    return integrate(z, false, nullptr);
  };
  map.jacobian = [integrate, d](const Vector& z) {
    Matrix jac(d, d);
    integrate(z, true, &jac);
    return jac;
  };

  {
    const Matrix spin = rot2(orient * t0);
    map.inner_map = Matrix::Identity(d, d) - plane * plane.transpose() +
                    plane * spin * plane.transpose();
  }

  auto levels = [axis, plane, a_root, a, b, d](const Vector& z, double* su,
                                               double* sy) {
    *sy = (plane.transpose() * z).norm() / b;
    if (d > 2)
      *su = (a_root * (axis.transpose() * z)).norm() / a;
    else
      *su = 0.0;
  };

  map.region = [levels, sigma](const Vector& z) {
    double su, sy;
    levels(z, &su, &sy);
    if (su >= 1.0 || sy >= 1.0) return -1;
    if (su <= sigma && sy <= sigma) return 1;
    return 0;
  };
  map.domain = [levels](const Vector& z) {
    double su, sy;
    levels(z, &su, &sy);
    return su <= 2.0 && sy <= 2.0;
  };

  map.frame = Matrix(d, d);
  map.box_half = Vector(d);
  if (d > 2) {
    map.frame.leftCols(d - 2) = axis;
    const Matrix qinv =
        (0.5 * (axis_form + axis_form.transpose())).inverse();
    for (int i = 0; i < d - 2; ++i)
      map.box_half(i) = 2.0 * a * std::sqrt(qinv(i, i));
  }
  map.frame.rightCols(2) = plane;
  map.box_half(d - 2) = 2.0 * b;
  map.box_half(d - 1) = 2.0 * b;

  map.inner_tol = 1e-7;
  return map;
}

KernelReport kernel_verify(const KernelMap& map, int resolution,
                           std::uint64_t seed) {
  KernelReport rep;
  const int d = map.dim;
  if (d <= 0 || !map.value || !map.jacobian) return rep;
  const auto& primes = halton_primes();
  require(d <= static_cast<int>(primes.size()), "degenerate");

  std::vector<Vector> points;
  points.reserve(resolution);
  std::uint64_t index = seed;
  const std::uint64_t limit =
      seed + static_cast<std::uint64_t>(resolution) * 1000ull;
  while (static_cast<int>(points.size()) < resolution && index < limit) {
    Vector c(d);
    for (int i = 0; i < d; ++i)
      c(i) = (2.0 * halton(index, primes[i]) - 1.0) * map.box_half(i);
    Vector z = map.frame * c;
    ++index;
    if (!map.domain || map.domain(z)) points.push_back(std::move(z));
  }

  const std::size_t n = points.size();
  std::vector<double> det_defect(n), jac_defect(n), displacement(n),
      sympl(n, 0.0);
  std::vector<int> violation(n, 0);
  const Matrix identity = Matrix::Identity(d, d);
  const bool has_form = map.form.size() > 0;

  parallel_for(n, [&](std::size_t i) {
    const Vector& z = points[i];
    const Vector hz = map.value(z);
    const Matrix jac = map.jacobian(z);
    det_defect[i] = std::abs(jac.determinant() - 1.0);
    jac_defect[i] = opnorm(jac - identity);
    const double disp = (hz - z).norm();
    displacement[i] = disp;
    if (map.region) {
      const int r = map.region(z);
      if (r == -1 && disp != 0.0) violation[i] = 1;
      if (r == 1) {
        if (map.inner_is_derivative) {
          if (opnorm(jac - map.inner_map) > map.inner_tol) violation[i] = 1;
        } else {
          const double gap = (hz - map.inner_map * z).norm();
          if (gap > map.inner_tol * std::max(1.0, z.norm()))
            violation[i] = 1;
        }
      }
    }
    if (has_form)
      sympl[i] = opnorm(jac.transpose() * map.form * jac - map.form);
  });

  rep.points = static_cast<int>(n);
  for (std::size_t i = 0; i < n; ++i) {
    rep.max_det_defect = std::max(rep.max_det_defect, det_defect[i]);
    rep.max_jacobian_defect = std::max(rep.max_jacobian_defect, jac_defect[i]);
    rep.max_displacement = std::max(rep.max_displacement, displacement[i]);
    rep.support_violations += violation[i];
    rep.symplectic_residual = std::max(rep.symplectic_residual, sympl[i]);
  }
  return rep;
}

}  // namespace cocycle
