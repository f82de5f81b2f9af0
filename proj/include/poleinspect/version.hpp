#pragma once

namespace poleinspect {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace poleinspect
