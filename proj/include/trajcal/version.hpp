#pragma once

namespace trajcal {

inline constexpr const char* kVersion = "1.0.0";

} // namespace trajcal
