#pragma once

namespace feddap {

inline constexpr const char* kVersion = "feddap 0.1.0";

}  // namespace feddap
