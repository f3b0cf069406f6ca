#pragma once

#include <functional>
#include <string_view>

namespace agggp {

using WarningSink = std::function<void(std::string_view)>;

/// Emits a warning through the current sink (stderr by default).
void warn(std::string_view message);

/// Replaces the warning sink and returns the previous one. An empty sink
/// silences warnings.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace agggp
