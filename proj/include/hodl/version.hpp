#pragma once

namespace hodl {
inline constexpr const char* kVersion = "0.1.0";
}
