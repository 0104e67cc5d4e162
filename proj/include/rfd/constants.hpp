#pragma once

namespace rfd {

inline constexpr double kSpeedOfLight = 299792458.0; // m/s
inline constexpr double kEps0 = 8.8541878128e-12;    // F/m
inline constexpr double kPi = 3.141592653589793238462643383279502884;

} // namespace rfd
