#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace handover {

// Anisotropic squared-exponential kernel hyperparameters.
struct KernelHyper {
  double signal_var = 4.0;
  Eigen::VectorXd lengthscales;

  static KernelHyper isotropic(double signal_var, double lengthscale, Eigen::Index dim);
  void validate() const;
  Eigen::Index dim() const noexcept { return lengthscales.size(); }
};

double kernel(const Eigen::VectorXd& y1, const Eigen::VectorXd& y2, const KernelHyper& h);

Eigen::MatrixXd gram_matrix(std::span<const Eigen::VectorXd> points, const KernelHyper& h);

Eigen::VectorXd cross_kernel(std::span<const Eigen::VectorXd> points, const Eigen::VectorXd& y,
                             const KernelHyper& h);

}  // namespace handover
