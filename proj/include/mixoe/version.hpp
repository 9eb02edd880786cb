#pragma once

namespace mixoe {

inline constexpr const char* kToolName = "mixoe";
inline constexpr const char* kToolVersion = "0.1.0";

} // namespace mixoe
