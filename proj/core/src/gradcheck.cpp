#include <algorithm>
#include <cmath>

#include "agggp/errors.hpp"
#include "agggp/optim.hpp"

namespace agggp {

GradientCheckReport check_gradient(const MVBAggModel& model, const MultiResDataset& data,
                                   std::span<const Index> batch, Index n_total, double floor) {
  const ElboGradient analytic = elbo_grad(model, data, batch, n_total);
  const ParamVector base = pack(model);
  GradientCheckReport report;
  MVBAggModel probe = model;
  ParamVector shifted = base;
  for (Index k = 0; k < base.size(); ++k) {
    const double theta = base.values[k];
    const double h = 1e-5 * (1.0 + std::abs(theta));
    shifted.values[k] = theta + h;
    unpack(shifted, probe);
    const double up = elbo(probe, data, batch, n_total);
    shifted.values[k] = theta - h;
    unpack(shifted, probe);
    const double down = elbo(probe, data, batch, n_total);
    shifted.values[k] = theta;

    GradientCheckEntry e;
    e.name = base.layout.name(k);
    e.analytic = analytic.gradient.values[k];
    e.numeric = (up - down) / (2.0 * h);
    e.rel_error =
        std::abs(e.analytic - e.numeric) / std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    if (e.rel_error > report.max_rel_error || report.worst.empty()) {
      if (e.rel_error >= report.max_rel_error) {
        report.max_rel_error = e.rel_error;
        report.worst = e.name;
      }
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

GradientCheckReport check_gradient(const MVBAggModel& model, const MultiResDataset& data, double floor) {
  std::vector<Index> all(static_cast<std::size_t>(data.size()));
  for (Index i = 0; i < data.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return check_gradient(model, data, all, data.size(), floor);
}

}  // namespace agggp
