#include "agggp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "agggp/errors.hpp"

namespace agggp {

namespace {

constexpr double kSqrt3 = 1.7320508075688772;

void check_dim(const KernelSpec& spec, Index cols, const char* what) {
  if (cols != spec.input_dim) {
    throw InputError(std::string(what) + " has " + std::to_string(cols) +
                     " columns but the kernel expects " + std::to_string(spec.input_dim));
  }
}

}  // namespace

std::string_view to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::RBF:
      return "rbf";
    case KernelFamily::Matern32:
      return "matern32";
  }
  return "unknown";
}

KernelFamily parse_kernel_family(std::string_view name) {
  if (name == "rbf") return KernelFamily::RBF;
  if (name == "matern32") return KernelFamily::Matern32;
  throw InputError("unknown kernel family '" + std::string(name) + "'");
}

void KernelSpec::validate() const {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ParameterError("kernel scale must be positive and finite");
  }
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) {
    throw ParameterError("kernel lengthscale must be positive and finite");
  }
  if (input_dim < 1) throw ParameterError("kernel input_dim must be >= 1");
}

double kernel_from_sqdist(const KernelSpec& spec, double sqdist) {
  const double l = spec.lengthscale;
  switch (spec.family) {
    case KernelFamily::RBF:
      return spec.scale * std::exp(-sqdist / (2.0 * l * l));
    case KernelFamily::Matern32: {
      const double u = kSqrt3 * std::sqrt(sqdist) / l;
      return spec.scale * (1.0 + u) * std::exp(-u);
    }
  }
  return 0.0;
}

double eval(const KernelSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x,
            const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (x.size() != spec.input_dim || y.size() != spec.input_dim) {
    throw InputError("kernel eval: input length does not match input_dim");
  }
  double d2 = 0.0;
  for (Index k = 0; k < x.size(); ++k) {
    const double diff = x[k] - y[k];
    d2 += diff * diff;
  }
  return kernel_from_sqdist(spec, d2);
}

Eigen::MatrixXd squared_distances(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                  const Eigen::Ref<const Eigen::MatrixXd>& Y) {
  if (X.cols() != Y.cols()) throw InputError("squared_distances: column mismatch");
  const Index n = X.rows();
  const Index m = Y.rows();
  Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(n, m);
  // Accumulate dimension by dimension so every entry sums in the same order as eval().
  for (Index k = 0; k < X.cols(); ++k) {
    for (Index b = 0; b < m; ++b) {
      const double yb = Y(b, k);
      for (Index a = 0; a < n; ++a) {
        const double diff = X(a, k) - yb;
        d2(a, b) += diff * diff;
      }
    }
  }
  return d2;
}

Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& X,
                     const Eigen::Ref<const Eigen::MatrixXd>& Y) {
  check_dim(spec, X.cols(), "gram: X");
  check_dim(spec, Y.cols(), "gram: Y");
  Eigen::MatrixXd k = squared_distances(X, Y);
  k = k.unaryExpr([&spec](double d2) { return kernel_from_sqdist(spec, d2); });
  return k;
}

Eigen::MatrixXd gram_from_sqdist(const KernelSpec& spec, const Eigen::MatrixXd& sqdist) {
  const double s = spec.scale;
  const double l = spec.lengthscale;
  if (spec.family == KernelFamily::RBF) {
    return (s * (sqdist.array() * (-0.5 / (l * l))).exp()).matrix();
  }
  const Eigen::ArrayXXd u = sqdist.array().sqrt() * (kSqrt3 / l);
  return (s * (1.0 + u) * (-u).exp()).matrix();
}

GramDerivatives gram_with_derivatives(const KernelSpec& spec, const Eigen::MatrixXd& sqdist,
                                      bool with_input_weight) {
  GramDerivatives out;
  const double s = spec.scale;
  const double l = spec.lengthscale;
  const double l2 = l * l;
  switch (spec.family) {
    case KernelFamily::RBF: {
      out.value = (s * (sqdist.array() * (-0.5 / l2)).exp()).matrix();
      out.dlog_lengthscale = (out.value.array() * sqdist.array() * (1.0 / l2)).matrix();
      if (with_input_weight) out.input_weight = out.value * (1.0 / l2);
      break;
    }
    case KernelFamily::Matern32: {
      const Eigen::ArrayXXd u = sqdist.array().sqrt() * (kSqrt3 / l);
      const Eigen::ArrayXXd e = s * (-u).exp();
      out.value = ((1.0 + u) * e).matrix();
      out.dlog_lengthscale = (u * u * e).matrix();
      if (with_input_weight) out.input_weight = (e * (3.0 / l2)).matrix();
      break;
    }
  }
  return out;
}

double median_heuristic(const Eigen::Ref<const Eigen::MatrixXd>& points, Index per_bag_cap,
                        std::span<const Index> bag_ids, std::uint64_t seed) {
  if (per_bag_cap < 1) throw InputError("median_heuristic: per_bag_cap must be >= 1");
  if (static_cast<Index>(bag_ids.size()) != points.rows()) {
    throw InputError("median_heuristic: bag_ids length does not match number of points");
  }
  std::map<Index, std::vector<Index>> groups;
  for (Index r = 0; r < points.rows(); ++r) groups[bag_ids[static_cast<std::size_t>(r)]].push_back(r);

  std::mt19937_64 rng(seed);
  std::vector<Index> kept;
  for (auto& [id, rows] : groups) {
    if (static_cast<Index>(rows.size()) > per_bag_cap) {
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(static_cast<std::size_t>(per_bag_cap));
      std::sort(rows.begin(), rows.end());
    }
    kept.insert(kept.end(), rows.begin(), rows.end());
  }
  if (kept.size() < 2) throw InputError("median_heuristic: fewer than 2 points after capping");

  std::vector<double> dist;
  dist.reserve(kept.size() * (kept.size() - 1) / 2);
  for (std::size_t a = 0; a < kept.size(); ++a) {
    for (std::size_t b = a + 1; b < kept.size(); ++b) {
      dist.push_back((points.row(kept[a]) - points.row(kept[b])).norm());
    }
  }
  const std::size_t mid = dist.size() / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid), dist.end());
  double median = dist[mid];
  if (dist.size() % 2 == 0) {
    const double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (lower + median);
  }
  if (!(median > 0.0)) {
    throw InputError("median_heuristic: median pairwise distance is zero");
  }
  return median;
}

}  // namespace agggp
