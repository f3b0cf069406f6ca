#include "agggp/bags.hpp"

#include <cmath>
#include <string>

#include "agggp/errors.hpp"

namespace agggp {

namespace {

constexpr double kWeightSumTol = 1e-9;

void check_weights(const Eigen::Ref<const Eigen::VectorXd>& w, const std::string& where) {
  if (w.size() == 0) throw InputError(where + ": bag has no points");
  if ((w.array() < 0.0).any() || !w.allFinite()) {
    throw InputError(where + ": weights must be finite and non-negative");
  }
  if (std::abs(w.sum() - 1.0) > kWeightSumTol) {
    throw InputError(where + ": weights do not sum to 1");
  }
}

}  // namespace

void Bag::validate() const {
  if (points.rows() != weights.size()) {
    throw InputError("bag '" + region_id + "': points and weights differ in length");
  }
  check_weights(weights, "bag '" + region_id + "'");
}

Eigen::VectorXd normalize_weights(const std::optional<Eigen::VectorXd>& raw, Index n) {
  if (!raw) {
    if (n < 1) throw InputError("normalize_weights: bag must contain at least one point");
    return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  }
  if (raw->size() != n) throw InputError("normalize_weights: length mismatch");
  if (n < 1) throw InputError("normalize_weights: bag must contain at least one point");
  if ((raw->array() < 0.0).any() || !raw->allFinite()) {
    throw InputError("normalize_weights: weights must be finite and non-negative");
  }
  const double total = raw->sum();
  if (!(total > 0.0)) throw InputError("normalize_weights: weights are all zero");
  return *raw / total;
}

BagSet::BagSet(std::vector<std::string> ids, Eigen::MatrixXd pts, Eigen::VectorXd wts,
               std::vector<Index> offs)
    : region_ids_(std::move(ids)), points_(std::move(pts)), weights_(std::move(wts)), offsets_(std::move(offs)) {
  if (offsets_.size() != region_ids_.size() + 1 || offsets_.front() != 0 ||
      offsets_.back() != points_.rows()) {
    throw InputError("BagSet: offsets do not describe the point block");
  }
  if (weights_.size() != points_.rows()) throw InputError("BagSet: one weight per point required");
  for (Index i = 0; i < size(); ++i) {
    if (bag_size(i) < 1) throw InputError("BagSet: region '" + region_id(i) + "' has no points");
    check_weights(weights(i), "region '" + region_id(i) + "'");
  }
}

BagSet BagSet::from_bags(const std::vector<Bag>& bags) {
  if (bags.empty()) return BagSet({}, Eigen::MatrixXd(0, 0), Eigen::VectorXd(0), {0});
  const Index dim = bags.front().points.cols();
  Index total = 0;
  for (const auto& b : bags) {
    b.validate();
    if (b.points.cols() != dim) throw InputError("BagSet: bags differ in dimension");
    total += b.points.rows();
  }
  std::vector<std::string> ids;
  std::vector<Index> offsets{0};
  Eigen::MatrixXd points(total, dim);
  Eigen::VectorXd weights(total);
  for (const auto& b : bags) {
    const Index off = offsets.back();
    points.middleRows(off, b.points.rows()) = b.points;
    weights.segment(off, b.points.rows()) = b.weights;
    ids.push_back(b.region_id);
    offsets.push_back(off + b.points.rows());
  }
  return BagSet(std::move(ids), std::move(points), std::move(weights), std::move(offsets));
}

std::vector<Index> BagSet::point_bag_ids() const {
  std::vector<Index> ids(static_cast<std::size_t>(total_points()));
  for (Index i = 0; i < size(); ++i) {
    for (Index r = offset(i); r < offset(i + 1); ++r) ids[static_cast<std::size_t>(r)] = i;
  }
  return ids;
}

Bag BagSet::bag(Index i) const { return Bag{region_id(i), points(i), weights(i)}; }

BagSet BagSet::subset(std::span<const Index> indices) const {
  Index total = 0;
  for (Index i : indices) {
    if (i < 0 || i >= size()) throw InputError("BagSet::subset: index out of range");
    total += bag_size(i);
  }
  std::vector<std::string> ids;
  std::vector<Index> offsets{0};
  Eigen::MatrixXd pts(total, dim());
  Eigen::VectorXd w(total);
  for (Index i : indices) {
    const Index off = offsets.back();
    pts.middleRows(off, bag_size(i)) = points(i);
    w.segment(off, bag_size(i)) = weights(i);
    ids.push_back(region_id(i));
    offsets.push_back(off + bag_size(i));
  }
  return BagSet(std::move(ids), std::move(pts), std::move(w), std::move(offsets));
}

MultiResDataset::MultiResDataset(std::vector<ResolutionMeta> meta, std::vector<BagSet> resolutions,
                                 std::optional<Eigen::VectorXd> labels)
    : meta_(std::move(meta)), resolutions_(std::move(resolutions)), labels_(std::move(labels)) {
  if (resolutions_.empty()) throw InputError("dataset must have at least one resolution");
  if (meta_.size() != resolutions_.size()) throw InputError("dataset: one name per resolution required");
  const auto& ids = resolutions_.front().region_ids();
  for (std::size_t l = 1; l < resolutions_.size(); ++l) {
    if (resolutions_[l].region_ids() != ids) {
      throw InputError("dataset: resolution '" + meta_[l].name +
                       "' does not list the same regions in the same order");
    }
  }
  if (labels_ && labels_->size() != static_cast<Index>(ids.size())) {
    throw InputError("dataset: label count does not match region count");
  }
}

MultiResDataset MultiResDataset::from_bags(const std::vector<MultiResBag>& bags,
                                           std::vector<ResolutionMeta> meta) {
  const std::size_t d = meta.size();
  std::vector<std::vector<Bag>> per_res(d);
  bool any_label = false;
  bool all_label = true;
  for (const auto& b : bags) {
    if (b.resolutions.size() != d) {
      throw InputError("region '" + b.region_id + "' is missing a resolution");
    }
    for (std::size_t l = 0; l < d; ++l) {
      Bag copy = b.resolutions[l];
      copy.region_id = b.region_id;
      per_res[l].push_back(std::move(copy));
    }
    any_label = any_label || b.label.has_value();
    all_label = all_label && b.label.has_value();
  }
  std::optional<Eigen::VectorXd> labels;
  if (any_label) {
    if (!all_label) throw InputError("either every region or no region must carry a label");
    labels = Eigen::VectorXd(static_cast<Index>(bags.size()));
    for (std::size_t i = 0; i < bags.size(); ++i) (*labels)[static_cast<Index>(i)] = *bags[i].label;
  }
  std::vector<BagSet> sets;
  for (auto& v : per_res) sets.push_back(BagSet::from_bags(v));
  return MultiResDataset(std::move(meta), std::move(sets), std::move(labels));
}

Index MultiResDataset::resolution_index(const std::string& name) const {
  for (std::size_t l = 0; l < meta_.size(); ++l) {
    if (meta_[l].name == name) return static_cast<Index>(l);
  }
  throw InputError("no resolution named '" + name + "'");
}

const Eigen::VectorXd& MultiResDataset::labels() const {
  if (!labels_) throw InputError("dataset has no labels");
  return *labels_;
}

MultiResBag MultiResDataset::bag(Index i) const {
  MultiResBag out;
  out.region_id = region_ids()[static_cast<std::size_t>(i)];
  for (const auto& r : resolutions_) out.resolutions.push_back(r.bag(i));
  if (labels_) out.label = (*labels_)[i];
  return out;
}

MultiResDataset MultiResDataset::subset(std::span<const Index> indices) const {
  std::vector<BagSet> sets;
  for (const auto& r : resolutions_) sets.push_back(r.subset(indices));
  std::optional<Eigen::VectorXd> labels;
  if (labels_) {
    labels = Eigen::VectorXd(static_cast<Index>(indices.size()));
    for (std::size_t k = 0; k < indices.size(); ++k) (*labels)[static_cast<Index>(k)] = (*labels_)[indices[k]];
  }
  return MultiResDataset(meta_, std::move(sets), std::move(labels));
}

MultiResDataset MultiResDataset::select_resolutions(std::span<const Index> resolution_indices) const {
  std::vector<ResolutionMeta> meta;
  std::vector<BagSet> sets;
  for (Index l : resolution_indices) {
    if (l < 0 || l >= num_resolutions()) throw InputError("select_resolutions: index out of range");
    meta.push_back(meta_[static_cast<std::size_t>(l)]);
    sets.push_back(resolutions_[static_cast<std::size_t>(l)]);
  }
  return MultiResDataset(std::move(meta), std::move(sets), labels_);
}

Eigen::MatrixXd aggregated_gram(const KernelSpec& spec, const BagSet& a, const BagSet& b) {
  if (a.dim() != spec.input_dim || b.dim() != spec.input_dim) {
    throw InputError("aggregated_gram: bag dimension does not match kernel input_dim");
  }
  Eigen::MatrixXd out(a.size(), b.size());
  for (Index i = 0; i < a.size(); ++i) {
    // Row of w_i^T k(X_i, X_b) over every point of b, then reduce per bag of b.
    const Eigen::RowVectorXd row = a.weights(i).transpose() * gram(spec, a.points(i), b.all_points());
    for (Index j = 0; j < b.size(); ++j) {
      out(i, j) = row.segment(b.offset(j), b.bag_size(j)).dot(b.weights(j));
    }
  }
  // Summation order differs between (i, j) and (j, i); make the self Gram exactly symmetric.
  if (&a == &b) out = (0.5 * (out + out.transpose())).eval();
  return out;
}

Eigen::VectorXd aggregated_self_variance(const KernelSpec& spec, const BagSet& a) {
  if (a.dim() != spec.input_dim) {
    throw InputError("aggregated_self_variance: bag dimension does not match kernel input_dim");
  }
  Eigen::VectorXd out(a.size());
  for (Index i = 0; i < a.size(); ++i) {
    const auto w = a.weights(i);
    out[i] = w.dot(gram(spec, a.points(i), a.points(i)) * w);
  }
  return out;
}

Eigen::VectorXd centroid_features(const Bag& bag) {
  bag.validate();
  return bag.points.transpose() * bag.weights;
}

Eigen::MatrixXd centroid_features(const BagSet& bags) {
  Eigen::MatrixXd out(bags.size(), bags.dim());
  for (Index i = 0; i < bags.size(); ++i) {
    out.row(i) = (bags.points(i).transpose() * bags.weights(i)).transpose();
  }
  return out;
}

}  // namespace agggp
