#pragma once

#include <random>

#include <Eigen/Core>

#include "agggp/kernels.hpp"

namespace agggp {

/// Exact draw of a zero-mean stationary field with covariance `spec` on a
/// rows x cols lattice (spacing `spacing` in both directions), by circulant
/// embedding. Entry (r, c) is the value at offset (c * spacing, r * spacing).
/// The embedding grows until its spectrum is non-negative; throws
/// NumericalError if that never happens within the size limit.
Eigen::MatrixXd sample_stationary_field(const KernelSpec& spec, Index rows, Index cols, double spacing,
                                        std::mt19937_64& rng);

}  // namespace agggp
