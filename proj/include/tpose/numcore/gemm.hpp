#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace tpose::nc::gemm {

// Row-major dense products on raw buffers. Eigen runs single-threaded here, so the
// summation order is fixed for a given build and results are reproducible.

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

/// y[B, out] = x[B, in] * w[in, out] + b[out].
inline void affine(const double* x, std::size_t batch, std::size_t in, const double* w, const double* b, std::size_t out,
                   double* y) {
  Map ym(y, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out));
  ym.rowwise() = Eigen::Map<const Eigen::RowVectorXd>(b, static_cast<Eigen::Index>(out));
  ym.noalias() += ConstMap(x, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in)) *
                  ConstMap(w, static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
}

/// dx[B, in] += dy[B, out] * w[in, out]^T.
inline void add_dy_wt(const double* dy, std::size_t batch, std::size_t out, const double* w, std::size_t in, double* dx) {
  Map(dx, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in)).noalias() +=
      ConstMap(dy, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out)) *
      ConstMap(w, static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)).transpose();
}

/// dw[in, out] += x[B, in]^T * dy[B, out].
inline void add_xt_dy(const double* x, std::size_t batch, std::size_t in, const double* dy, std::size_t out, double* dw) {
  Map(dw, static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out)).noalias() +=
      ConstMap(x, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(in)).transpose() *
      ConstMap(dy, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(out));
}

}  // namespace tpose::nc::gemm
