#pragma once

#include <Eigen/Core>

namespace unimot::kernels {

// Eigen backs the dense products only; its accumulation order is a pure
// function of the operand shapes, so repeated calls are bit-identical.

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using CMap = Eigen::Map<const RowMat<Real>>;
template <class Real>
using MMap = Eigen::Map<RowMat<Real>>;

// c[m x n] = a[m x k] * b[k x n]
template <class Real>
void matmul_nn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MMap<Real>(c, m, n).noalias() = CMap<Real>(a, m, k) * CMap<Real>(b, k, n);
}

// da[m x k] += dc[m x n] * b[k x n]^T
template <class Real>
void matmul_nt_acc(const Real* dc, const Real* b, Real* da, int m, int k, int n) {
  MMap<Real>(da, m, k).noalias() += CMap<Real>(dc, m, n) * CMap<Real>(b, k, n).transpose();
}

// db[k x n] += a[m x k]^T * dc[m x n]
template <class Real>
void matmul_tn_acc(const Real* a, const Real* dc, Real* db, int m, int k, int n) {
  MMap<Real>(db, k, n).noalias() += CMap<Real>(a, m, k).transpose() * CMap<Real>(dc, m, n);
}

}  // namespace unimot::kernels
