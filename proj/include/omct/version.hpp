#pragma once

namespace omct {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace omct
