#pragma once

#include <filesystem>

#include "agggp/bags.hpp"

namespace agggp {

/// Loads a dataset from its manifest:
///   {"resolutions": [{"name", "path", "dim", "kernel"?}, ...], "labels": "labels.csv"?}
/// Paths are relative to the manifest's directory. Per-resolution CSVs have
/// the header region_id,weight,f0,...,f{dim-1}; an empty weight column means
/// uniform weights for that region. The labels CSV has header region_id,y.
/// Regions are aligned across resolutions by id, in the order they first
/// appear in the first resolution; a region missing from any resolution is
/// an InputError.
MultiResDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes manifest.json, one CSV per resolution and labels.csv (when the
/// dataset has labels) into `dir`. Returns the manifest path.
std::filesystem::path save_dataset(const MultiResDataset& data, const std::filesystem::path& dir);

}  // namespace agggp
