#pragma once

namespace ebtm {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ebtm
