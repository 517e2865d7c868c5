#pragma once

namespace wmar {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace wmar
