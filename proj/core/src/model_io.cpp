#include "agggp/model_io.hpp"

#include <json.hpp>

#include "agggp/errors.hpp"
#include "agggp/file_util.hpp"

namespace agggp {

namespace {

using nlohmann::json;

json matrix_rows(const Eigen::MatrixXd& M, bool lower_only) {
  json rows = json::array();
  for (Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    const Index end = lower_only ? i + 1 : M.cols();
    for (Index j = 0; j < end; ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd rows_to_matrix(const json& rows, Index cols, bool lower_only, const std::string& what) {
  if (!rows.is_array()) throw InputError(what + " must be a list of rows");
  const Index n = static_cast<Index>(rows.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, lower_only ? n : cols);
  for (Index i = 0; i < n; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    const Index expect = lower_only ? i + 1 : cols;
    if (!row.is_array() || static_cast<Index>(row.size()) != expect) {
      throw InputError(what + ": row " + std::to_string(i) + " should have " + std::to_string(expect) + " entries");
    }
    for (Index j = 0; j < expect; ++j) M(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return M;
}

}  // namespace

std::string model_to_json(const MVBAggModel& model) {
  model.validate();
  json doc;
  doc["resolutions"] = json::array();
  for (std::size_t l = 0; l < model.kernels.size(); ++l) {
    const KernelSpec& k = model.kernels[l];
    const InducingSet& ind = model.vstate.resolutions[l];
    json r;
    r["name"] = model.resolution_names[l];
    r["kernel"] = {{"family", std::string(to_string(k.family))},
                   {"scale", k.scale},
                   {"lengthscale", k.lengthscale},
                   {"input_dim", k.input_dim}};
    r["Z"] = matrix_rows(ind.Z, false);
    r["eta"] = std::vector<double>(ind.eta.data(), ind.eta.data() + ind.eta.size());
    r["chol_sigma_lower"] = matrix_rows(ind.chol_sigma, true);
    doc["resolutions"].push_back(std::move(r));
  }
  doc["noise_var"] = model.noise_var;
  doc["noise_mode"] = std::string(to_string(model.noise_mode));
  doc["trainable_z"] = model.vstate.trainable_z;
  return doc.dump(1) + "\n";
}

MVBAggModel model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("model JSON: ") + e.what());
  }
  MVBAggModel model;
  try {
    if (!doc.contains("resolutions") || !doc["resolutions"].is_array() || doc["resolutions"].empty()) {
      throw InputError("model JSON: 'resolutions' must be a non-empty list");
    }
    for (const json& r : doc["resolutions"]) {
      const std::string name = r.at("name").get<std::string>();
      const json& kj = r.at("kernel");
      KernelSpec spec;
      spec.family = parse_kernel_family(kj.at("family").get<std::string>());
      spec.scale = kj.at("scale").get<double>();
      spec.lengthscale = kj.at("lengthscale").get<double>();
      spec.input_dim = kj.at("input_dim").get<Index>();
      InducingSet ind;
      ind.Z = rows_to_matrix(r.at("Z"), spec.input_dim, false, "resolution '" + name + "' Z");
      const auto eta = r.at("eta").get<std::vector<double>>();
      ind.eta = Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Index>(eta.size()));
      ind.chol_sigma = rows_to_matrix(r.at("chol_sigma_lower"), 0, true, "resolution '" + name + "' chol_sigma_lower");
      model.resolution_names.push_back(name);
      model.kernels.push_back(spec);
      model.vstate.resolutions.push_back(std::move(ind));
    }
    model.noise_var = doc.at("noise_var").get<double>();
    model.noise_mode = parse_noise_mode(doc.value("noise_mode", std::string("plain")));
    model.vstate.trainable_z = doc.value("trainable_z", false);
  } catch (const json::exception& e) {
    throw InputError(std::string("model JSON: ") + e.what());
  }
  model.validate();
  return model;
}

void save_model(const MVBAggModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_to_json(model));
}

MVBAggModel load_model(const std::filesystem::path& path) { return model_from_json(read_file(path)); }

}  // namespace agggp
