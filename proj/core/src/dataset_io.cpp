#include "agggp/dataset_io.hpp"

#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "agggp/errors.hpp"
#include "agggp/file_util.hpp"

namespace agggp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RawRegion {
  std::vector<double> coords;  // row-major N x dim
  std::vector<double> weights;
  Index n = 0;
  Index weighted = 0;
};

struct RawResolution {
  std::vector<std::string> order;
  std::unordered_map<std::string, RawRegion> regions;
};

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) out.push_back(line);
    start = end + 1;
  }
  return out;
}

RawResolution read_resolution_csv(const fs::path& path, Index dim) {
  const std::string text = read_file(path);
  const auto lines = lines_of(text);
  const std::string where = path.string();
  if (lines.empty()) throw InputError(where + ": empty file");
  const auto header = split_csv_line(lines.front());
  if (static_cast<Index>(header.size()) != dim + 2 || header[0] != "region_id" || header[1] != "weight") {
    throw InputError(where + ": header must be region_id,weight,f0,...,f" + std::to_string(dim - 1));
  }
  for (Index k = 0; k < dim; ++k) {
    if (header[static_cast<std::size_t>(k + 2)] != "f" + std::to_string(k)) {
      throw InputError(where + ": expected column f" + std::to_string(k));
    }
  }
  RawResolution raw;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto fields = split_csv_line(lines[r]);
    const std::string ctx = where + ":" + std::to_string(r + 1);
    if (static_cast<Index>(fields.size()) != dim + 2) throw InputError(ctx + ": wrong number of fields");
    std::string id(fields[0]);
    if (id.empty()) throw InputError(ctx + ": empty region_id");
    auto [it, inserted] = raw.regions.try_emplace(id);
    if (inserted) raw.order.push_back(id);
    RawRegion& region = it->second;
    if (!fields[1].empty()) {
      region.weights.push_back(parse_double(fields[1], ctx));
      ++region.weighted;
    } else {
      region.weights.push_back(0.0);
    }
    for (Index k = 0; k < dim; ++k) region.coords.push_back(parse_double(fields[static_cast<std::size_t>(k + 2)], ctx));
    ++region.n;
  }
  return raw;
}

}  // namespace

MultiResDataset load_dataset(const fs::path& manifest_path) {
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw InputError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  if (!manifest.contains("resolutions") || !manifest["resolutions"].is_array() ||
      manifest["resolutions"].empty()) {
    throw InputError(manifest_path.string() + ": manifest needs a non-empty 'resolutions' array");
  }

  std::vector<ResolutionMeta> meta;
  std::vector<RawResolution> raws;
  std::vector<Index> dims;
  try {
    for (const auto& entry : manifest["resolutions"]) {
      ResolutionMeta m;
      m.name = entry.at("name").get<std::string>();
      if (entry.contains("kernel")) m.kernel = parse_kernel_family(entry["kernel"].get<std::string>());
      const Index dim = entry.at("dim").get<Index>();
      if (dim < 1) throw InputError("resolution '" + m.name + "': dim must be >= 1");
      raws.push_back(read_resolution_csv(base / entry.at("path").get<std::string>(), dim));
      dims.push_back(dim);
      meta.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw InputError(manifest_path.string() + ": malformed resolution entry: " + e.what());
  }

  const std::vector<std::string>& order = raws.front().order;
  std::vector<BagSet> sets;
  for (std::size_t l = 0; l < raws.size(); ++l) {
    const RawResolution& raw = raws[l];
    if (raw.regions.size() != order.size()) {
      throw InputError("resolution '" + meta[l].name + "' lists a different set of regions than '" +
                       meta.front().name + "'");
    }
    Index total = 0;
    for (const auto& id : order) {
      auto it = raw.regions.find(id);
      if (it == raw.regions.end()) {
        throw InputError("region '" + id + "' is missing from resolution '" + meta[l].name + "'");
      }
      total += it->second.n;
    }
    const Index dim = dims[l];
    Eigen::MatrixXd points(total, dim);
    Eigen::VectorXd weights(total);
    std::vector<Index> offsets{0};
    for (const auto& id : order) {
      const RawRegion& region = raw.regions.at(id);
      const Index off = offsets.back();
      for (Index j = 0; j < region.n; ++j) {
        for (Index k = 0; k < dim; ++k) points(off + j, k) = region.coords[static_cast<std::size_t>(j * dim + k)];
      }
      std::optional<Eigen::VectorXd> rw;
      if (region.weighted == region.n) {
        rw = Eigen::Map<const Eigen::VectorXd>(region.weights.data(), region.n);
      } else if (region.weighted != 0) {
        throw InputError("region '" + id + "' in resolution '" + meta[l].name +
                         "' mixes empty and non-empty weights");
      }
      weights.segment(off, region.n) = normalize_weights(rw, region.n);
      offsets.push_back(off + region.n);
    }
    sets.emplace_back(order, std::move(points), std::move(weights), std::move(offsets));
  }

  std::optional<Eigen::VectorXd> labels;
  if (manifest.contains("labels") && !manifest["labels"].is_null()) {
    const fs::path lpath = base / manifest["labels"].get<std::string>();
    const std::string text = read_file(lpath);
    const auto lines = lines_of(text);
    if (lines.empty() || split_csv_line(lines.front()) != std::vector<std::string_view>{"region_id", "y"}) {
      throw InputError(lpath.string() + ": header must be region_id,y");
    }
    std::unordered_map<std::string, double> by_id;
    for (std::size_t r = 1; r < lines.size(); ++r) {
      const auto fields = split_csv_line(lines[r]);
      const std::string ctx = lpath.string() + ":" + std::to_string(r + 1);
      if (fields.size() != 2) throw InputError(ctx + ": wrong number of fields");
      if (!by_id.emplace(std::string(fields[0]), parse_double(fields[1], ctx)).second) {
        throw InputError(ctx + ": duplicate label for region '" + std::string(fields[0]) + "'");
      }
    }
    if (by_id.size() != order.size()) {
      throw InputError(lpath.string() + ": labels do not cover exactly the dataset's regions");
    }
    labels = Eigen::VectorXd(static_cast<Index>(order.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      auto it = by_id.find(order[i]);
      if (it == by_id.end()) throw InputError(lpath.string() + ": no label for region '" + order[i] + "'");
      (*labels)[static_cast<Index>(i)] = it->second;
    }
  }
  return MultiResDataset(std::move(meta), std::move(sets), std::move(labels));
}

fs::path save_dataset(const MultiResDataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["resolutions"] = json::array();
  for (Index l = 0; l < data.num_resolutions(); ++l) {
    const BagSet& set = data.resolution(l);
    const std::string file = data.meta(l).name + ".csv";
    std::ostringstream csv;
    csv << "region_id,weight";
    for (Index k = 0; k < set.dim(); ++k) csv << ",f" << k;
    csv << '\n';
    for (Index i = 0; i < set.size(); ++i) {
      const auto pts = set.points(i);
      const auto w = set.weights(i);
      for (Index j = 0; j < pts.rows(); ++j) {
        csv << set.region_id(i) << ',' << format_double(w[j]);
        for (Index k = 0; k < set.dim(); ++k) csv << ',' << format_double(pts(j, k));
        csv << '\n';
      }
    }
    write_file_atomic(dir / file, csv.str());
    manifest["resolutions"].push_back({{"name", data.meta(l).name},
                                       {"path", file},
                                       {"dim", set.dim()},
                                       {"kernel", std::string(to_string(data.meta(l).kernel))}});
  }
  if (data.has_labels()) {
    std::ostringstream csv;
    csv << "region_id,y\n";
    for (Index i = 0; i < data.size(); ++i) {
      csv << data.region_ids()[static_cast<std::size_t>(i)] << ',' << format_double(data.labels()[i]) << '\n';
    }
    write_file_atomic(dir / "labels.csv", csv.str());
    manifest["labels"] = "labels.csv";
  }
  const fs::path path = dir / "manifest.json";
  write_file_atomic(path, manifest.dump(2) + "\n");
  return path;
}

}  // namespace agggp
