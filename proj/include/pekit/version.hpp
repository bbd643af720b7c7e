#pragma once

namespace pekit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pekit
