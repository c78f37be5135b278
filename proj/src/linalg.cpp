#include "guard_lab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "guard_lab/errors.hpp"

namespace guard_lab {

namespace {

constexpr double kSymTol = 1e-12;
constexpr int kMaxSweeps = 100;

void check_len(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
}

void check_symmetric(std::size_t n, const std::vector<double>& a) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double v = a[i * n + j];
      if (!std::isfinite(v)) throw ContractError("SymMatrix: non-finite entry");
      if (j > i && std::abs(v - a[j * n + i]) > kSymTol) {
        throw ContractError("SymMatrix: asymmetric at (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
      }
    }
  }
}

double off_diagonal_norm(const std::vector<double>& a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s += a[i * n + j] * a[i * n + j];
  return std::sqrt(s);
}

EigenDecomp sorted_decomp(const Vector& values, const std::vector<double>& vecs, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return values[x] > values[y]; });
  EigenDecomp out;
  out.eigenvalues.reserve(n);
  out.eigenvectors.reserve(n);
  for (std::size_t k : order) {
    out.eigenvalues.push_back(values[k]);
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = vecs[i * n + k];
    out.eigenvectors.push_back(std::move(v));
  }
  return out;
}

}  // namespace

SymMatrix::SymMatrix(std::size_t order) : n_(order), a_(order * order, 0.0) {}

SymMatrix::SymMatrix(std::size_t order, std::vector<double> entries)
    : n_(order), a_(std::move(entries)) {
  if (a_.size() != n_ * n_) throw DimensionError("SymMatrix: entry count does not match order");
  check_symmetric(n_, a_);
}

SymMatrix SymMatrix::identity(std::size_t order) {
  SymMatrix m(order);
  m.add_diagonal(1.0);
  return m;
}

SymMatrix SymMatrix::diagonal(const Vector& diag) {
  SymMatrix m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m.a_[i * m.n_ + i] = diag[i];
  return m;
}

void SymMatrix::set(std::size_t i, std::size_t j, double v) {
  a_[i * n_ + j] = v;
  a_[j * n_ + i] = v;
}

void SymMatrix::add(std::size_t i, std::size_t j, double v) {
  a_[i * n_ + j] += v;
  if (i != j) a_[j * n_ + i] += v;
}

void SymMatrix::add_diagonal(double v) {
  for (std::size_t i = 0; i < n_; ++i) a_[i * n_ + i] += v;
}

SymMatrix& SymMatrix::operator+=(const SymMatrix& o) {
  if (o.n_ != n_) throw DimensionError("SymMatrix +=: order mismatch");
  for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += o.a_[k];
  return *this;
}

SymMatrix& SymMatrix::operator*=(double s) {
  for (double& v : a_) v *= s;
  return *this;
}

double dot(const Vector& a, const Vector& b) {
  check_len(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const Vector& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

Vector add(const Vector& a, const Vector& b) {
  check_len(a, b, "add");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

Vector sub(const Vector& a, const Vector& b) {
  check_len(a, b, "sub");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

Vector scaled(const Vector& a, double s) {
  Vector r(a);
  for (double& v : r) v *= s;
  return r;
}

void axpy(double s, const Vector& x, Vector& y) {
  check_len(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

bool all_finite(const Vector& a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Vector& a, const char* what) {
  if (!all_finite(a)) throw ContractError(std::string(what) + ": non-finite entry");
}

Vector matvec(const SymMatrix& m, const Vector& x) {
  const std::size_t n = m.order();
  if (x.size() != n) throw DimensionError("matvec: length mismatch");
  Vector r(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += m(i, j) * x[j];
    r[i] = s;
  }
  return r;
}

double frobenius(const SymMatrix& m) {
  double s = 0.0;
  for (double v : m.entries()) s += v * v;
  return std::sqrt(s);
}

double norm_inf(const SymMatrix& m) {
  double best = 0.0;
  for (std::size_t i = 0; i < m.order(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.order(); ++j) s += std::abs(m(i, j));
    best = std::max(best, s);
  }
  return best;
}

EigenDecomp sym_eigen(const SymMatrix& m) {
  const std::size_t n = m.order();
  std::vector<double> a = m.entries();
  check_symmetric(n, a);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  const double target = 1e-12 * frobenius(m);
  int sweep = 0;
  while (off_diagonal_norm(a, n) > target) {
    if (sweep++ >= kMaxSweeps) throw NumericError("sym_eigen: no convergence after 100 sweeps");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        // Rotation angle from the standard stable formulas.
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p];
          const double akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k];
          const double aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        a[p * n + q] = 0.0;
        a[q * n + p] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p];
          const double vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  Vector values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
  return sorted_decomp(values, v, n);
}

EigenDecomp inverse_eigen(const SymMatrix& m) {
  EigenDecomp e = sym_eigen(m);
  const std::size_t n = e.eigenvalues.size();
  for (std::size_t k = 0; k < n; ++k) {
    if (!(e.eigenvalues[k] > 0.0)) {
      throw SingularityError("inverse_eigen: non-positive eigenvalue, increase damping", k);
    }
  }
  // Inversion reverses the order.
  EigenDecomp out;
  for (std::size_t k = n; k-- > 0;) {
    out.eigenvalues.push_back(1.0 / e.eigenvalues[k]);
    out.eigenvectors.push_back(e.eigenvectors[k]);
  }
  return out;
}

SymMatrix reconstruct(const EigenDecomp& e) {
  const std::size_t n = e.eigenvalues.size();
  SymMatrix m(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vector& vk = e.eigenvectors[k];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) m.add(i, j, e.eigenvalues[k] * vk[i] * vk[j]);
  }
  return m;
}

Vector solve_spd(const SymMatrix& m, const Vector& b) {
  const std::size_t n = m.order();
  if (b.size() != n) throw DimensionError("solve_spd: length mismatch");
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0)) {
      throw SingularityError("solve_spd: non-positive pivot at index " + std::to_string(j) +
                                 "; matrix is not positive definite (increase damping)",
                             j);
    }
    const double ljj = std::sqrt(d);
    l[j * n + j] = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / ljj;
    }
  }
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
    y[i] = s / l[i * n + i];
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l[k * n + i] * x[k];
    x[i] = s / l[i * n + i];
  }
  return x;
}

}  // namespace guard_lab
