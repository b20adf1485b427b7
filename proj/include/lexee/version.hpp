#pragma once

namespace lexee {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace lexee
