#include <cmath>
#include <string>

#include "agggp/errors.hpp"
#include "agggp/optim.hpp"

namespace agggp {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ParameterError("softplus_inverse: argument must be positive");
  // log(exp(y) - 1) = y + log(1 - exp(-y))
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

ParamLayout ParamLayout::of(const MVBAggModel& model) {
  ParamLayout layout;
  Index cursor = 0;
  for (Index l = 0; l < model.num_resolutions(); ++l) {
    const InducingSet& ind = model.vstate.resolutions[static_cast<std::size_t>(l)];
    Block b;
    b.name = model.resolution_names[static_cast<std::size_t>(l)];
    b.inducing = ind.size();
    b.dim = ind.Z.cols();
    b.log_scale = cursor++;
    b.log_lengthscale = cursor++;
    b.eta = cursor;
    cursor += b.inducing;
    b.chol = cursor;
    cursor += b.inducing * (b.inducing + 1) / 2;
    if (model.vstate.trainable_z) {
      b.z = cursor;
      cursor += b.inducing * b.dim;
    }
    layout.blocks.push_back(std::move(b));
  }
  layout.log_noise = cursor++;
  layout.size = cursor;
  return layout;
}

bool ParamLayout::compatible_with(const MVBAggModel& model) const {
  const ParamLayout other = of(model);
  if (other.size != size || other.blocks.size() != blocks.size()) return false;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    if (other.blocks[l].inducing != blocks[l].inducing || other.blocks[l].dim != blocks[l].dim ||
        other.blocks[l].z != blocks[l].z) {
      return false;
    }
  }
  return true;
}

bool ParamLayout::is_hyperparameter(Index k) const {
  if (k == log_noise) return true;
  for (const Block& b : blocks) {
    if (k == b.log_scale || k == b.log_lengthscale) return true;
  }
  return false;
}

std::string ParamLayout::name(Index k) const {
  if (k < 0 || k >= size) throw InputError("parameter index out of range");
  if (k == log_noise) return "log_noise_var";
  for (const Block& b : blocks) {
    const std::string prefix = "res[" + b.name + "].";
    if (k == b.log_scale) return prefix + "log_scale";
    if (k == b.log_lengthscale) return prefix + "log_lengthscale";
    if (k >= b.eta && k < b.chol) return prefix + "eta[" + std::to_string(k - b.eta) + "]";
    const Index chol_end = b.chol + b.inducing * (b.inducing + 1) / 2;
    if (k >= b.chol && k < chol_end) {
      Index t = k - b.chol;
      Index row = 0;
      while (t > row) {
        t -= row + 1;
        ++row;
      }
      return prefix + "chol[" + std::to_string(row) + "," + std::to_string(t) + "]";
    }
    if (b.z >= 0 && k >= b.z && k < b.z + b.inducing * b.dim) {
      const Index t = k - b.z;
      return prefix + "Z[" + std::to_string(t / b.dim) + "," + std::to_string(t % b.dim) + "]";
    }
  }
  throw InputError("parameter index out of range");
}

ParamVector pack(const MVBAggModel& model) {
  ParamVector out;
  out.layout = ParamLayout::of(model);
  out.values.resize(out.layout.size);
  auto& v = out.values;
  for (std::size_t l = 0; l < out.layout.blocks.size(); ++l) {
    const auto& b = out.layout.blocks[l];
    const InducingSet& ind = model.vstate.resolutions[l];
    v[b.log_scale] = std::log(model.kernels[l].scale);
    v[b.log_lengthscale] = std::log(model.kernels[l].lengthscale);
    v.segment(b.eta, b.inducing) = ind.eta;
    Index t = b.chol;
    for (Index i = 0; i < b.inducing; ++i) {
      for (Index j = 0; j < i; ++j) v[t++] = ind.chol_sigma(i, j);
      v[t++] = softplus_inverse(ind.chol_sigma(i, i));
    }
    if (b.z >= 0) {
      for (Index i = 0; i < b.inducing; ++i) {
        for (Index d = 0; d < b.dim; ++d) v[b.z + i * b.dim + d] = ind.Z(i, d);
      }
    }
  }
  v[out.layout.log_noise] = std::log(model.noise_var);
  return out;
}

void unpack(const ParamVector& params, MVBAggModel& model) {
  if (params.values.size() != params.layout.size || !params.layout.compatible_with(model)) {
    throw InputError("unpack: parameter vector does not match the model structure");
  }
  const auto& v = params.values;
  for (std::size_t l = 0; l < params.layout.blocks.size(); ++l) {
    const auto& b = params.layout.blocks[l];
    InducingSet& ind = model.vstate.resolutions[l];
    model.kernels[l].scale = std::exp(v[b.log_scale]);
    model.kernels[l].lengthscale = std::exp(v[b.log_lengthscale]);
    ind.eta = v.segment(b.eta, b.inducing);
    Index t = b.chol;
    ind.chol_sigma.setZero(b.inducing, b.inducing);
    for (Index i = 0; i < b.inducing; ++i) {
      for (Index j = 0; j < i; ++j) ind.chol_sigma(i, j) = v[t++];
      ind.chol_sigma(i, i) = softplus(v[t++]);
    }
    if (b.z >= 0) {
      for (Index i = 0; i < b.inducing; ++i) {
        for (Index d = 0; d < b.dim; ++d) ind.Z(i, d) = v[b.z + i * b.dim + d];
      }
    }
  }
  model.noise_var = std::exp(v[params.layout.log_noise]);
}

}  // namespace agggp
