#pragma once

#include <string>
#include <vector>

#include "rfd/chirp.hpp"
#include "rfd/geometry.hpp"

// MIMO array geometry and element radiation patterns. Positions live in the
// radar-local frame (boresight +z, azimuth along x, elevation along y);
// radar_pose places the array in the world.

namespace rfd {

struct RadiationPattern {
    enum Kind { kIsotropic, kCosinePower };
    Kind kind = kCosinePower;
    double exponent = 1.0; // gain = max(0, cos angle)^exponent, 1 at boresight
};

struct AntennaArray {
    std::vector<Vec3> tx_positions;
    std::vector<Vec3> rx_positions;
    RadiationPattern pattern;
    RigidPlain radar_pose; // radar -> world
};

// >=1 TX and >=1 RX, positions distinct within each list.
void validate_array(const AntennaArray& array);

struct VirtualElement {
    int tx_id = 0;
    int rx_id = 0;
    Vec3 position; // tx + rx, radar-local
};

// All TX/RX pairings, tx-major, rx-minor. The ordering is load-bearing: the
// imaging FFT lays elements out in exactly this sequence.
std::vector<VirtualElement> virtual_array(const AntennaArray& array);

// Directional gain in [0, 1]; both arguments must be unit vectors.
inline double pattern_gain(const RadiationPattern& p, const Vec3& boresight, const Vec3& dir) {
    if (p.kind == RadiationPattern::kIsotropic) return 1.0;
    const double c = std::max(0.0, dot(boresight, dir));
    return std::pow(c, p.exponent);
}
inline DiffScalar pattern_gain(const RadiationPattern& p, const DVec3& boresight,
                               const DVec3& dir) {
    if (p.kind == RadiationPattern::kIsotropic) return DiffScalar{1.0};
    return pow_real(max_zero(dot(boresight, dir)), p.exponent);
}

// World-frame accessors used by the tracer.
inline Vec3 tx_world(const AntennaArray& a, int i) {
    return apply_rigid(a.radar_pose, a.tx_positions[i], Vec3{});
}
inline Vec3 rx_world(const AntennaArray& a, int i) {
    return apply_rigid(a.radar_pose, a.rx_positions[i], Vec3{});
}
inline Vec3 boresight_world(const AntennaArray& a) {
    return rotate_axis_angle(a.radar_pose.rotation, Vec3{0.0, 0.0, 1.0});
}

// Array plus the chirp defaults that normally ship with the hardware.
struct RadarPreset {
    AntennaArray array;
    ChirpConfig chirp;
};

// Presets: "p2go24" (1 TX / 2 RX, 24 GHz), "awr1843" (3 TX / 4 RX, 77 GHz,
// 2-lambda TX spacing giving a 12-element lambda/2 azimuth line), "vtrigb"
// (20 TX / 20 RX crossed lines giving a 20x20 lambda/2 grid at 65.5 GHz).
// Throws ConfigError for unknown names.
RadarPreset antenna_preset(const std::string& name);

} // namespace rfd
