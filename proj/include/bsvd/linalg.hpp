#pragma once

// Dense linear-algebra primitives shared by every other module.

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "bsvd/errors.hpp"

namespace bsvd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Thin singular value decomposition A = U diag(d) V'.
///
/// d is nonincreasing and nonnegative; U and V have r = min(m, n) orthonormal
/// columns. The largest-magnitude entry of every column of U is positive.
template <typename Scalar>
struct SvdTriple {
  MatrixX<Scalar> U;
  VectorX<Scalar> d;
  MatrixX<Scalar> V;

  MatrixX<Scalar> reconstruct() const { return U * d.asDiagonal() * V.transpose(); }
};

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& a) {
  return a.allFinite();
}

/// Throws ArgumentError if any entry is NaN or infinite.
template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& a, const char* what = "matrix") {
  if (!a.allFinite())
    throw ArgumentError(std::string(what) + " " + shape_string(a.rows(), a.cols()) +
                        " contains non-finite entries");
}

/// max |Q'Q - I|, the orthonormality defect of the columns of Q.
template <typename Derived>
typename Derived::Scalar orthonormality_error(const Eigen::MatrixBase<Derived>& q) {
  using Scalar = typename Derived::Scalar;
  if (q.cols() == 0) return Scalar(0);
  const MatrixX<Scalar> gram = q.transpose() * q;
  return (gram - MatrixX<Scalar>::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

template <typename Derived>
SvdTriple<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  require_finite(a, "svd input");
  if (a.rows() < 1 || a.cols() < 1)
    throw ArgumentError("svd of empty matrix " + shape_string(a.rows(), a.cols()));

  Eigen::BDCSVD<MatrixX<Scalar>> solver(a.derived(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success)
    throw NumericalError("svd failed to converge for " + shape_string(a.rows(), a.cols()) +
                         " matrix");

  SvdTriple<Scalar> out{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  for (Eigen::Index j = 0; j < out.U.cols(); ++j) {
    Eigen::Index at = 0;
    out.U.col(j).cwiseAbs().maxCoeff(&at);
    if (out.U(at, j) < Scalar(0)) {
      out.U.col(j) *= Scalar(-1);
      out.V.col(j) *= Scalar(-1);
    }
  }
  return out;
}

/// Best rank-k approximation of y in Frobenius norm (truncated SVD).
template <typename Derived>
MatrixX<typename Derived::Scalar> rank_k_projection(const Eigen::MatrixBase<Derived>& y,
                                                    Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index r = std::min(y.rows(), y.cols());
  if (k < 0 || k > r)
    throw ArgumentError("rank " + std::to_string(k) + " outside [0, " + std::to_string(r) +
                        "] for " + shape_string(y.rows(), y.cols()) + " matrix");
  if (k == 0) return MatrixX<Scalar>::Zero(y.rows(), y.cols());
  const auto f = svd(y);
  return f.U.leftCols(k) * f.d.head(k).asDiagonal() * f.V.leftCols(k).transpose();
}

template <typename Derived>
typename Derived::Scalar frobenius_sq(const Eigen::MatrixBase<Derived>& a) {
  return a.squaredNorm();
}

/// Orthonormal basis of the orthogonal complement of the columns of `ua`
/// inside R^ambient. The first entry of each returned column whose magnitude
/// exceeds 1e-12 is positive.
template <typename Derived>
MatrixX<typename Derived::Scalar> null_basis(const Eigen::MatrixBase<Derived>& ua,
                                             Eigen::Index ambient) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index c = ua.cols();
  if (c > 0 && ua.rows() != ambient)
    throw ArgumentError("null_basis: basis has " + std::to_string(ua.rows()) +
                        " rows, ambient dimension is " + std::to_string(ambient));
  if (c >= ambient && ambient > 0)
    throw ArgumentError("null_basis: " + std::to_string(c) + " columns leave no complement in R^" +
                        std::to_string(ambient));
  if (c == 0) return MatrixX<Scalar>::Identity(ambient, ambient);
  if (orthonormality_error(ua) > Scalar(1e-8))
    throw ContractError("null_basis: input columns are not orthonormal (defect " +
                        std::to_string(static_cast<double>(orthonormality_error(ua))) + ")");

  Eigen::HouseholderQR<MatrixX<Scalar>> qr(ua.derived());
  MatrixX<Scalar> q = qr.householderQ() * MatrixX<Scalar>::Identity(ambient, ambient);
  MatrixX<Scalar> n = q.rightCols(ambient - c);
  for (Eigen::Index j = 0; j < n.cols(); ++j) {
    for (Eigen::Index i = 0; i < ambient; ++i) {
      if (std::abs(n(i, j)) > Scalar(1e-12)) {
        if (n(i, j) < Scalar(0)) n.col(j) *= Scalar(-1);
        break;
      }
    }
  }
  return n;
}

/// Eigenvalues of the symmetric matrix a'a, sorted descending.
template <typename Derived>
VectorX<typename Derived::Scalar> gram_eigenvalues(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> g = a.transpose() * a;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(g, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw NumericalError("eigen decomposition failed for " + shape_string(g.rows(), g.cols()));
  VectorX<Scalar> ev = es.eigenvalues().reverse();
  return ev.cwiseMax(Scalar(0));
}

}  // namespace bsvd
