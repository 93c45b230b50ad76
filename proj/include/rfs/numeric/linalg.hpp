#pragma once

#include <vector>

#include "rfs/numeric/tensor.hpp"

namespace rfs {

/// Singular values of a rank-2 tensor, descending, length min(rows, cols).
/// Computed as square roots of the eigenvalues of the smaller Gram matrix.
std::vector<double> singular_values(const Tensor<double>& m);

}  // namespace rfs
