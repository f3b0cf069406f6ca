#pragma once

#include <filesystem>
#include <string>

#include "agggp/variational.hpp"

namespace agggp {

std::string model_to_json(const MVBAggModel& model);
/// Throws InputError on malformed documents and ParameterError on invalid values.
MVBAggModel model_from_json(const std::string& text);

void save_model(const MVBAggModel& model, const std::filesystem::path& path);
MVBAggModel load_model(const std::filesystem::path& path);

}  // namespace agggp
