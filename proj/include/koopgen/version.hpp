#pragma once

namespace koopgen {
inline constexpr const char* kVersion = "0.1.0";
}
