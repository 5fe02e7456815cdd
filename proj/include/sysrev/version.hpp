#pragma once

namespace sysrev {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace sysrev
