#pragma once

#include <cstddef>
#include <vector>

namespace guard_lab {

using Vector = std::vector<double>;

// Dense symmetric matrix, row-major storage of the full square.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(std::size_t order);
  // Validates symmetry (1e-12 absolute) and finiteness.
  SymMatrix(std::size_t order, std::vector<double> entries);

  static SymMatrix identity(std::size_t order);
  static SymMatrix diagonal(const Vector& diag);

  std::size_t order() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
  // Writes both (i,j) and (j,i).
  void set(std::size_t i, std::size_t j, double v);
  void add(std::size_t i, std::size_t j, double v);
  void add_diagonal(double v);
  const std::vector<double>& entries() const { return a_; }

  SymMatrix& operator+=(const SymMatrix& o);
  SymMatrix& operator*=(double s);

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

struct EigenDecomp {
  Vector eigenvalues;                // descending
  std::vector<Vector> eigenvectors;  // eigenvectors[k] pairs with eigenvalues[k]
};

// Sum accumulated strictly left to right.
double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);
double norm_inf(const Vector& a);
Vector add(const Vector& a, const Vector& b);
Vector sub(const Vector& a, const Vector& b);
Vector scaled(const Vector& a, double s);
// y += s * x
void axpy(double s, const Vector& x, Vector& y);
bool all_finite(const Vector& a);
void require_finite(const Vector& a, const char* what);

Vector matvec(const SymMatrix& m, const Vector& x);
double frobenius(const SymMatrix& m);
double norm_inf(const SymMatrix& m);  // max absolute row sum

// Cyclic Jacobi. Stops when the off-diagonal Frobenius norm is
// at most 1e-12 * ||m||_F; throws NumericError after 100 sweeps.
EigenDecomp sym_eigen(const SymMatrix& m);

// Eigen-decomposition of m^{-1}: eigenvalues inverted and re-sorted.
EigenDecomp inverse_eigen(const SymMatrix& m);

SymMatrix reconstruct(const EigenDecomp& e);

// Cholesky solve. Throws SingularityError carrying the failing pivot.
Vector solve_spd(const SymMatrix& m, const Vector& b);

}  // namespace guard_lab
