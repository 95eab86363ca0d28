#pragma once

#include <functional>
#include <string>

namespace lvmoe {

using WarningSink = std::function<void(const std::string&)>;

/// Replaces the warning sink; the default writes to stderr. Passing an empty
/// function silences warnings. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);

void warn(const std::string& message);

}  // namespace lvmoe
