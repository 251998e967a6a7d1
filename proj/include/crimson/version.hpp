#pragma once

namespace crimson {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace crimson
