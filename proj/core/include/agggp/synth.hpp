#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "agggp/bags.hpp"
#include "agggp/kernels.hpp"

namespace agggp {

struct SynthResolution {
  std::string name;
  /// Spatial resolutions use the pixel coordinates (lon, lat) as covariates;
  /// the others use random smooth functions of location with `dim` outputs.
  bool spatial = false;
  Index dim = 1;
  Index points_per_region = 1;
  /// True kernel of the latent function. Scale 0 gives an identically zero latent.
  KernelSpec kernel;
};

struct SynthConfig {
  Index grid_rows = 1;
  Index grid_cols = 1;
  std::vector<SynthResolution> resolutions;
  double noise_std = 0.0;
  /// When set, the noise std is this multiple of the sample std of the
  /// noiseless region labels.
  std::optional<double> noise_std_relative;
  std::uint64_t seed = 0;
  /// Pixels per side of the lattice covering the unit square.
  Index lattice = 512;
  /// Largest joint draw done by dense Cholesky. Larger spatial resolutions
  /// use the exact lattice sampler; larger non-spatial ones are rejected.
  Index exact_point_cap = 5000;

  Index n_regions() const { return grid_rows * grid_cols; }
  void validate() const;
};

/// Parses the synth config JSON. `n_regions` alone picks the most square grid.
SynthConfig synth_config_from_json(const std::string& text);

struct SynthResult {
  MultiResDataset data;
  /// latents[l][i]: true f^l at the points of region i, in dataset order.
  std::vector<std::vector<Eigen::VectorXd>> latents;
  /// locations[l][i]: N x 2 pixel-centre coordinates of those points.
  std::vector<std::vector<Eigen::MatrixXd>> locations;
  /// Noise-free labels sum_l mean_j f^l.
  Eigen::VectorXd signal;
  double noise_std = 0.0;
  SynthConfig config;
};

SynthResult generate(const SynthConfig& config);

/// Writes the dataset (manifest + CSVs) and ground_truth.json into dir.
void write_synth(const SynthResult& result, const std::filesystem::path& dir);

}  // namespace agggp
