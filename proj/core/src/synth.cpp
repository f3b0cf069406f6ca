#include "agggp/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>
#include <json.hpp>

#include "agggp/circulant.hpp"
#include "agggp/dataset_io.hpp"
#include "agggp/errors.hpp"
#include "agggp/file_util.hpp"

namespace agggp {

namespace {

using nlohmann::json;

constexpr int kSinusoidTerms = 4;

struct Sinusoid {
  double amplitude;
  double wx, wy;
  double phase;
};

// g(s) for one output coordinate of a non-spatial resolution.
double covariate_value(const std::vector<Sinusoid>& terms, double x, double y) {
  double v = 0.0;
  for (const auto& t : terms) v += t.amplitude * std::sin(t.wx * x + t.wy * y + t.phase);
  return v;
}

std::vector<Sinusoid> random_sinusoids(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Sinusoid> terms;
  for (int m = 0; m < kSinusoidTerms; ++m) {
    const double freq = 2.0 * std::numbers::pi * (0.5 + 1.5 * unif(rng));
    const double angle = 2.0 * std::numbers::pi * unif(rng);
    terms.push_back({normal(rng) * std::sqrt(2.0 / kSinusoidTerms), freq * std::cos(angle),
                     freq * std::sin(angle), 2.0 * std::numbers::pi * unif(rng)});
  }
  return terms;
}

std::string region_name(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "region_%04lld", static_cast<long long>(i));
  return buf;
}

Eigen::VectorXd joint_draw(const KernelSpec& spec, const Eigen::MatrixXd& X, std::mt19937_64& rng) {
  Eigen::MatrixXd K = gram(spec, X, X);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(X.rows());
  for (Index t = 0; t < z.size(); ++t) z[t] = normal(rng);
  for (double jitter = 1e-10; jitter <= 1e-6 * 1.0001; jitter *= 10.0) {
    Eigen::MatrixXd A = K;
    A.diagonal().array() += jitter * spec.scale;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success) return llt.matrixL() * z;
  }
  throw NumericalError("synth: latent covariance is not positive definite");
}

json kernel_json(const KernelSpec& k) {
  return {{"family", std::string(to_string(k.family))},
          {"scale", k.scale},
          {"lengthscale", k.lengthscale},
          {"input_dim", k.input_dim}};
}

}  // namespace

void SynthConfig::validate() const {
  if (grid_rows < 1 || grid_cols < 1) throw InputError("synth: grid must have at least one row and column");
  if (resolutions.empty()) throw InputError("synth: need at least one resolution");
  if (!(noise_std >= 0.0)) throw InputError("synth: noise_std must be >= 0");
  if (noise_std_relative && !(*noise_std_relative >= 0.0)) throw InputError("synth: noise_std_relative must be >= 0");
  if (lattice < 1) throw InputError("synth: lattice must be >= 1");
  for (const auto& r : resolutions) {
    if (r.name.empty()) throw InputError("synth: resolution names must be non-empty");
    if (r.points_per_region < 1) throw InputError("synth: points_per_region must be >= 1");
    if (r.dim < 1) throw InputError("synth: dim must be >= 1");
    if (r.spatial && r.dim != 2) throw InputError("synth: spatial resolutions have dim 2");
    if (r.kernel.input_dim != r.dim) throw InputError("synth: kernel input_dim must equal dim");
    if (!(r.kernel.scale >= 0.0) || !std::isfinite(r.kernel.scale)) throw InputError("synth: kernel scale must be >= 0");
    if (!(r.kernel.lengthscale > 0.0) || !std::isfinite(r.kernel.lengthscale)) {
      throw InputError("synth: kernel lengthscale must be positive");
    }
  }
}

SynthConfig synth_config_from_json(const std::string& text) {
  SynthConfig cfg;
  try {
    const json doc = json::parse(text);
    if (doc.contains("grid")) {
      const auto grid = doc.at("grid").get<std::vector<Index>>();
      if (grid.size() != 2) throw InputError("synth config: grid must be [rows, cols]");
      cfg.grid_rows = grid[0];
      cfg.grid_cols = grid[1];
      if (doc.contains("n_regions") && doc.at("n_regions").get<Index>() != cfg.grid_rows * cfg.grid_cols) {
        throw InputError("synth config: n_regions does not match the grid");
      }
    } else {
      const Index n = doc.at("n_regions").get<Index>();
      if (n < 1) throw InputError("synth config: n_regions must be >= 1");
      Index rows = static_cast<Index>(std::sqrt(static_cast<double>(n)));
      while (rows > 1 && n % rows != 0) --rows;
      cfg.grid_rows = rows;
      cfg.grid_cols = n / rows;
    }
    cfg.noise_std = doc.value("noise_std", 0.0);
    if (doc.contains("noise_std_relative")) cfg.noise_std_relative = doc.at("noise_std_relative").get<double>();
    cfg.seed = doc.value("seed", std::uint64_t{0});
    cfg.lattice = doc.value("lattice", Index{512});
    cfg.exact_point_cap = doc.value("exact_point_cap", Index{5000});
    for (const json& r : doc.at("resolutions")) {
      SynthResolution res;
      res.name = r.at("name").get<std::string>();
      res.spatial = r.value("spatial", false);
      res.dim = res.spatial ? 2 : r.at("dim").get<Index>();
      res.points_per_region = r.at("points_per_region").get<Index>();
      const json kj = r.value("kernel", json::object());
      res.kernel.family = parse_kernel_family(
          kj.value("family", std::string(res.spatial ? "matern32" : "rbf")));
      res.kernel.scale = kj.value("scale", 1.0);
      res.kernel.lengthscale = kj.value("lengthscale", res.spatial ? 0.2 : 1.0);
      res.kernel.input_dim = res.dim;
      cfg.resolutions.push_back(std::move(res));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("synth config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

SynthResult generate(const SynthConfig& config) {
  config.validate();
  const Index n = config.n_regions();
  const Index P = config.lattice;
  const Index D = static_cast<Index>(config.resolutions.size());
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  // Pixel column/row -> grid column/row of its centre.
  std::vector<std::vector<Index>> cols_in(static_cast<std::size_t>(config.grid_cols));
  std::vector<std::vector<Index>> rows_in(static_cast<std::size_t>(config.grid_rows));
  for (Index p = 0; p < P; ++p) {
    const double centre = (static_cast<double>(p) + 0.5) / static_cast<double>(P);
    cols_in[static_cast<std::size_t>(std::min<Index>(config.grid_cols - 1,
                                                     static_cast<Index>(centre * config.grid_cols)))]
        .push_back(p);
    rows_in[static_cast<std::size_t>(std::min<Index>(config.grid_rows - 1,
                                                     static_cast<Index>(centre * config.grid_rows)))]
        .push_back(p);
  }

  SynthResult out;
  out.config = config;
  out.latents.assign(static_cast<std::size_t>(D), {});
  out.locations.assign(static_cast<std::size_t>(D), {});

  std::vector<BagSet> sets;
  std::vector<ResolutionMeta> meta;
  for (Index l = 0; l < D; ++l) {
    const SynthResolution& res = config.resolutions[static_cast<std::size_t>(l)];
    const Index N = res.points_per_region;
    const Index total = n * N;
    std::vector<std::vector<Sinusoid>> covariates;
    if (!res.spatial) {
      for (Index k = 0; k < res.dim; ++k) covariates.push_back(random_sinusoids(rng));
    }

    // Distinct random pixels inside every cell.
    Eigen::Matrix<Index, Eigen::Dynamic, 2> pixels(total, 2);  // (row, col)
    for (Index i = 0; i < n; ++i) {
      const auto& prow = rows_in[static_cast<std::size_t>(i / config.grid_cols)];
      const auto& pcol = cols_in[static_cast<std::size_t>(i % config.grid_cols)];
      const Index cell = static_cast<Index>(prow.size() * pcol.size());
      if (cell < N) {
        throw ResourceError("synth: a region has " + std::to_string(cell) + " pixels but " + std::to_string(N) +
                            " points were requested; increase the lattice size");
      }
      std::vector<Index> idx(static_cast<std::size_t>(cell));
      for (Index t = 0; t < cell; ++t) idx[static_cast<std::size_t>(t)] = t;
      for (Index t = 0; t < N; ++t) {
        std::uniform_int_distribution<Index> pick(t, cell - 1);
        std::swap(idx[static_cast<std::size_t>(t)], idx[static_cast<std::size_t>(pick(rng))]);
        const Index flat = idx[static_cast<std::size_t>(t)];
        pixels(i * N + t, 0) = prow[static_cast<std::size_t>(flat / static_cast<Index>(pcol.size()))];
        pixels(i * N + t, 1) = pcol[static_cast<std::size_t>(flat % static_cast<Index>(pcol.size()))];
      }
    }
    Eigen::MatrixXd loc(total, 2);
    for (Index t = 0; t < total; ++t) {
      loc(t, 0) = (static_cast<double>(pixels(t, 1)) + 0.5) / static_cast<double>(P);
      loc(t, 1) = (static_cast<double>(pixels(t, 0)) + 0.5) / static_cast<double>(P);
    }
    Eigen::MatrixXd X(total, res.dim);
    if (res.spatial) {
      X = loc;
    } else {
      for (Index t = 0; t < total; ++t) {
        for (Index k = 0; k < res.dim; ++k) {
          X(t, k) = covariate_value(covariates[static_cast<std::size_t>(k)], loc(t, 0), loc(t, 1));
        }
      }
    }

    Eigen::VectorXd f = Eigen::VectorXd::Zero(total);
    if (res.kernel.scale > 0.0) {
      if (total <= config.exact_point_cap) {
        f = joint_draw(res.kernel, X, rng);
      } else if (res.spatial) {
        const Eigen::MatrixXd field =
            sample_stationary_field(res.kernel, P, P, 1.0 / static_cast<double>(P), rng);
        for (Index t = 0; t < total; ++t) f[t] = field(pixels(t, 0), pixels(t, 1));
      } else {
        throw ResourceError("synth: resolution '" + res.name + "' has " + std::to_string(total) +
                            " points, above the joint-draw cap of " + std::to_string(config.exact_point_cap));
      }
    }

    std::vector<std::string> ids;
    std::vector<Index> offsets{0};
    for (Index i = 0; i < n; ++i) {
      ids.push_back(region_name(i));
      offsets.push_back((i + 1) * N);
      out.latents[static_cast<std::size_t>(l)].push_back(f.segment(i * N, N));
      out.locations[static_cast<std::size_t>(l)].push_back(loc.middleRows(i * N, N));
    }
    sets.emplace_back(std::move(ids), std::move(X), Eigen::VectorXd::Constant(total, 1.0 / static_cast<double>(N)),
                      std::move(offsets));
    meta.push_back(ResolutionMeta{res.name, res.kernel.family});
  }

  out.signal = Eigen::VectorXd::Zero(n);
  for (Index l = 0; l < D; ++l) {
    for (Index i = 0; i < n; ++i) out.signal[i] += out.latents[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)].mean();
  }
  if (config.noise_std_relative) {
    const double sd =
        n > 1 ? std::sqrt((out.signal.array() - out.signal.mean()).square().sum() / static_cast<double>(n - 1)) : 0.0;
    out.noise_std = *config.noise_std_relative * sd;
  } else {
    out.noise_std = config.noise_std;
  }
  Eigen::VectorXd y = out.signal;
  for (Index i = 0; i < n; ++i) y[i] += out.noise_std * normal(rng);
  out.data = MultiResDataset(std::move(meta), std::move(sets), std::move(y));
  return out;
}

void write_synth(const SynthResult& result, const std::filesystem::path& dir) {
  save_dataset(result.data, dir);
  json hyper;
  hyper["noise_std"] = result.noise_std;
  hyper["noise_var"] = result.noise_std * result.noise_std;
  hyper["grid"] = {result.config.grid_rows, result.config.grid_cols};
  hyper["seed"] = result.config.seed;
  hyper["resolutions"] = json::array();
  for (const auto& r : result.config.resolutions) {
    hyper["resolutions"].push_back({{"name", r.name},
                                    {"spatial", r.spatial},
                                    {"dim", r.dim},
                                    {"points_per_region", r.points_per_region},
                                    {"kernel", kernel_json(r.kernel)}});
  }
  json latents = json::array();
  for (std::size_t l = 0; l < result.latents.size(); ++l) {
    for (std::size_t i = 0; i < result.latents[l].size(); ++i) {
      const auto& v = result.latents[l][i];
      const auto& loc = result.locations[l][i];
      json locs = json::array();
      for (Index t = 0; t < loc.rows(); ++t) locs.push_back({loc(t, 0), loc(t, 1)});
      latents.push_back({{"resolution", result.config.resolutions[l].name},
                         {"region_id", result.data.region_ids()[i]},
                         {"values", std::vector<double>(v.data(), v.data() + v.size())},
                         {"locations", std::move(locs)}});
    }
  }
  json doc;
  doc["hyperparams"] = std::move(hyper);
  doc["latents"] = std::move(latents);
  write_file_atomic(dir / "ground_truth.json", doc.dump() + "\n");
}

}  // namespace agggp
