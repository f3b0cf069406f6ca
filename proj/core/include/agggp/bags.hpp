#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "agggp/kernels.hpp"
#include "agggp/types.hpp"

namespace agggp {

/// One region's covariate points with quadrature weights summing to one.
struct Bag {
  std::string region_id;
  Eigen::MatrixXd points;   // N x d
  Eigen::VectorXd weights;  // N

  void validate() const;
};

/// Uniform 1/n weights when `raw` is absent, otherwise raw / sum(raw).
/// Throws InputError on negative entries or an all-zero vector.
Eigen::VectorXd normalize_weights(const std::optional<Eigen::VectorXd>& raw, Index n);

/// All bags of one resolution, stored as one contiguous column-major point
/// block plus an offsets index. Bag i occupies rows [offset(i), offset(i+1)).
class BagSet {
 public:
  BagSet() = default;
  BagSet(std::vector<std::string> region_ids, Eigen::MatrixXd points, Eigen::VectorXd weights,
         std::vector<Index> offsets);

  static BagSet from_bags(const std::vector<Bag>& bags);

  Index size() const { return static_cast<Index>(region_ids_.size()); }
  Index dim() const { return points_.cols(); }
  Index total_points() const { return points_.rows(); }

  const std::string& region_id(Index i) const { return region_ids_[static_cast<std::size_t>(i)]; }
  const std::vector<std::string>& region_ids() const { return region_ids_; }
  Index offset(Index i) const { return offsets_[static_cast<std::size_t>(i)]; }
  Index bag_size(Index i) const { return offset(i + 1) - offset(i); }

  auto points(Index i) const { return points_.middleRows(offset(i), bag_size(i)); }
  auto weights(Index i) const { return weights_.segment(offset(i), bag_size(i)); }

  const Eigen::MatrixXd& all_points() const { return points_; }
  const Eigen::VectorXd& all_weights() const { return weights_; }
  const std::vector<Index>& offsets() const { return offsets_; }

  /// Bag index of every stored point, in storage order.
  std::vector<Index> point_bag_ids() const;

  Bag bag(Index i) const;
  BagSet subset(std::span<const Index> indices) const;

 private:
  std::vector<std::string> region_ids_;
  Eigen::MatrixXd points_;
  Eigen::VectorXd weights_;
  std::vector<Index> offsets_{0};
};

/// A region's per-resolution covariate sets sharing one (optional) label.
struct MultiResBag {
  std::string region_id;
  std::vector<Bag> resolutions;
  std::optional<double> label;
};

struct ResolutionMeta {
  std::string name;
  KernelFamily kernel = KernelFamily::RBF;
};

/// n regions observed at D resolutions. Every resolution holds the same
/// regions in the same order.
class MultiResDataset {
 public:
  MultiResDataset() = default;
  MultiResDataset(std::vector<ResolutionMeta> meta, std::vector<BagSet> resolutions,
                  std::optional<Eigen::VectorXd> labels);

  static MultiResDataset from_bags(const std::vector<MultiResBag>& bags,
                                   std::vector<ResolutionMeta> meta);

  Index size() const { return resolutions_.empty() ? 0 : resolutions_.front().size(); }
  Index num_resolutions() const { return static_cast<Index>(resolutions_.size()); }

  const BagSet& resolution(Index l) const { return resolutions_[static_cast<std::size_t>(l)]; }
  const ResolutionMeta& meta(Index l) const { return meta_[static_cast<std::size_t>(l)]; }
  const std::vector<ResolutionMeta>& meta() const { return meta_; }
  /// Position of the resolution called `name`; throws InputError if absent.
  Index resolution_index(const std::string& name) const;

  const std::vector<std::string>& region_ids() const { return resolutions_.front().region_ids(); }

  bool has_labels() const { return labels_.has_value(); }
  /// Throws InputError when the dataset carries no labels.
  const Eigen::VectorXd& labels() const;

  MultiResBag bag(Index i) const;
  MultiResDataset subset(std::span<const Index> indices) const;
  MultiResDataset select_resolutions(std::span<const Index> resolution_indices) const;

 private:
  std::vector<ResolutionMeta> meta_;
  std::vector<BagSet> resolutions_;
  std::optional<Eigen::VectorXd> labels_;
};

/// (i, j) entry: w_i^T k(X_i, X_j) w_j between bag i of `a` and bag j of `b`.
Eigen::MatrixXd aggregated_gram(const KernelSpec& spec, const BagSet& a, const BagSet& b);

/// Diagonal of aggregated_gram(spec, a, a) without forming the off-diagonal blocks.
Eigen::VectorXd aggregated_self_variance(const KernelSpec& spec, const BagSet& a);

/// Weighted mean of the bag's points.
Eigen::VectorXd centroid_features(const Bag& bag);
/// Row i holds the weighted mean of bag i.
Eigen::MatrixXd centroid_features(const BagSet& bags);

}  // namespace agggp
