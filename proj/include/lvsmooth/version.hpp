#pragma once

namespace lvsmooth {

inline constexpr const char* kVersion = "0.1.0";

} // namespace lvsmooth
