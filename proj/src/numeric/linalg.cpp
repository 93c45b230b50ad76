#include "rfs/numeric/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>

namespace rfs {

std::vector<double> singular_values(const Tensor<double>& m) {
  if (!m.defined() || m.rank() != 2) {
    throw ShapeError("singular_values: expected a rank-2 tensor, got " +
                     (m.defined() ? shape_str(m.shape()) : std::string("undefined")));
  }
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto rows = static_cast<Eigen::Index>(m.dim(0));
  const auto cols = static_cast<Eigen::Index>(m.dim(1));
  if (rows == 0 || cols == 0) return {};
  Eigen::Map<const RowMat> a(m.data().data(), rows, cols);
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw ConfigError("singular_values: non-finite entry");
  }
  Eigen::MatrixXd gram = rows >= cols ? Eigen::MatrixXd(a.transpose() * a)
                                      : Eigen::MatrixXd(a * a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw RuntimeFailure("singular_values: eigensolver did not converge");
  }
  std::vector<double> out(static_cast<std::size_t>(gram.rows()));
  for (Eigen::Index i = 0; i < gram.rows(); ++i) {
    out[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, solver.eigenvalues()(i)));
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

}  // namespace rfs
