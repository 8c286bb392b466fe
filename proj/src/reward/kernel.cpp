#include "reward/kernel.hpp"

#include <cmath>

#include "core/error.hpp"

namespace handover {

KernelHyper KernelHyper::isotropic(double signal_var, double lengthscale, Eigen::Index dim) {
  KernelHyper h;
  h.signal_var = signal_var;
  h.lengthscales = Eigen::VectorXd::Constant(dim, lengthscale);
  return h;
}

void KernelHyper::validate() const {
  if (!std::isfinite(signal_var) || !(signal_var > 0.0)) {
    fail(ErrorCode::InvalidArgument, "kernel signal variance must be positive and finite");
  }
  if (lengthscales.size() == 0) fail(ErrorCode::InvalidArgument, "kernel needs lengthscales");
  for (Eigen::Index d = 0; d < lengthscales.size(); ++d) {
    if (!std::isfinite(lengthscales(d)) || !(lengthscales(d) > 0.0)) {
      fail(ErrorCode::InvalidArgument, "kernel lengthscales must be positive and finite");
    }
  }
}

namespace {

double kernel_unchecked(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                        const KernelHyper& h) {
  const double q = ((y1 - y2).array() / h.lengthscales.array()).square().sum();
  return h.signal_var * std::exp(-0.5 * q);
}

void check_dims(std::span<const Eigen::VectorXd> points, const KernelHyper& h) {
  for (const auto& p : points) {
    if (p.size() != h.lengthscales.size()) {
      fail(ErrorCode::InvalidArgument, "kernel input dimensions do not match");
    }
  }
}

}  // namespace

double kernel(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2, const KernelHyper& h) {
  if (y1.size() != y2.size() || y1.size() != h.lengthscales.size()) {
    fail(ErrorCode::InvalidArgument, "kernel input dimensions do not match");
  }
  h.validate();
  return kernel_unchecked(y1, y2, h);
}

Eigen::MatrixXd gram_matrix(std::span<const Eigen::VectorXd> points, const KernelHyper& h) {
  h.validate();
  check_dims(points, h);
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = h.signal_var;
    for (Eigen::Index j = 0; j < i; ++j) {
      k(i, j) = kernel_unchecked(points[i], points[j], h);
      k(j, i) = k(i, j);
    }
  }
  return k;
}

Eigen::VectorXd cross_kernel(std::span<const Eigen::VectorXd> points, const Eigen::VectorXd& y,
                             const KernelHyper& h) {
  h.validate();
  check_dims(points, h);
  if (y.size() != h.lengthscales.size()) {
    fail(ErrorCode::InvalidArgument, "kernel input dimensions do not match");
  }
  Eigen::VectorXd k(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    k(static_cast<Eigen::Index>(i)) = kernel_unchecked(points[i], y, h);
  }
  return k;
}

}  // namespace handover
