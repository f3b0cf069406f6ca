#include "agggp/circulant.hpp"

#include <cmath>
#include <complex>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "agggp/errors.hpp"

namespace agggp {

namespace {

using Complex = std::complex<double>;
using CMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p *= 2;
  return p;
}

void fft2(CMatrix& a) {
  Eigen::FFT<double> fft;
  std::vector<Complex> in, out;
  in.resize(static_cast<std::size_t>(a.cols()));
  for (Index r = 0; r < a.rows(); ++r) {
    for (Index c = 0; c < a.cols(); ++c) in[static_cast<std::size_t>(c)] = a(r, c);
    fft.fwd(out, in);
    for (Index c = 0; c < a.cols(); ++c) a(r, c) = out[static_cast<std::size_t>(c)];
  }
  in.resize(static_cast<std::size_t>(a.rows()));
  for (Index c = 0; c < a.cols(); ++c) {
    for (Index r = 0; r < a.rows(); ++r) in[static_cast<std::size_t>(r)] = a(r, c);
    fft.fwd(out, in);
    for (Index r = 0; r < a.rows(); ++r) a(r, c) = out[static_cast<std::size_t>(r)];
  }
}

constexpr Index kMaxEmbedding = 1 << 13;

}  // namespace

Eigen::MatrixXd sample_stationary_field(const KernelSpec& spec, Index rows, Index cols, double spacing,
                                        std::mt19937_64& rng) {
  if (rows < 1 || cols < 1 || !(spacing > 0.0)) throw InputError("lattice field: bad lattice size or spacing");
  if (spec.scale == 0.0) return Eigen::MatrixXd::Zero(rows, cols);
  Index m1 = next_pow2(2 * rows);
  Index m2 = next_pow2(2 * cols);
  CMatrix lambda;
  for (;;) {
    lambda.resize(m1, m2);
    for (Index i = 0; i < m1; ++i) {
      const double di = spacing * static_cast<double>(std::min(i, m1 - i));
      for (Index j = 0; j < m2; ++j) {
        const double dj = spacing * static_cast<double>(std::min(j, m2 - j));
        lambda(i, j) = kernel_from_sqdist(spec, di * di + dj * dj);
      }
    }
    fft2(lambda);
    double max_ev = 0.0, min_ev = 0.0;
    for (Index t = 0; t < lambda.size(); ++t) {
      max_ev = std::max(max_ev, lambda.data()[t].real());
      min_ev = std::min(min_ev, lambda.data()[t].real());
    }
    // Round-off leaves eigenvalues of order 1e-13 * max below zero.
    if (min_ev >= -1e-10 * max_ev) break;
    if (m1 >= kMaxEmbedding || m2 >= kMaxEmbedding) {
      throw NumericalError("lattice field: circulant embedding is not positive semi-definite");
    }
    m1 *= 2;
    m2 *= 2;
  }

  std::normal_distribution<double> normal(0.0, 1.0);
  const double norm = 1.0 / static_cast<double>(m1 * m2);
  for (Index t = 0; t < lambda.size(); ++t) {
    const double ev = std::max(0.0, lambda.data()[t].real());
    const double re = normal(rng);
    const double im = normal(rng);
    lambda.data()[t] = std::sqrt(ev * norm) * Complex(re, im);
  }
  fft2(lambda);
  // Real and imaginary parts are independent draws; the real part is used.
  Eigen::MatrixXd out(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) out(r, c) = lambda(r, c).real();
  }
  return out;
}

}  // namespace agggp
