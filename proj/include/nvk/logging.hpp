// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>

namespace nvk {

using WarningSink = std::function<void(const std::string&)>;

/// Reports a recoverable condition (empty class, zero-support class...).
/// Goes to stderr unless a sink is installed.
void warn(const std::string& message);

/// Installs `sink` and returns the previous one; pass nullptr to restore stderr.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace nvk
