#pragma once

namespace dbk {

inline constexpr const char* kVersion = "0.1.0";

} // namespace dbk
