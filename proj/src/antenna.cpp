#include "rfd/antenna.hpp"

#include "rfd/constants.hpp"

namespace rfd {

void validate_array(const AntennaArray& array) {
    if (array.tx_positions.empty() || array.rx_positions.empty())
        throw ConfigError("antenna array needs at least one TX and one RX element");
    auto check_distinct = [](const std::vector<Vec3>& v, const char* which) {
        for (size_t i = 0; i < v.size(); ++i)
            for (size_t j = i + 1; j < v.size(); ++j) {
                const Vec3 d = v[i] - v[j];
                if (dot(d, d) < 1e-20)
                    throw ConfigError(std::string("duplicate ") + which + " positions at indices " +
                                      std::to_string(i) + " and " + std::to_string(j));
            }
    };
    check_distinct(array.tx_positions, "TX");
    check_distinct(array.rx_positions, "RX");
    if (array.pattern.exponent < 0.0)
        throw ConfigError("radiation pattern exponent must be >= 0");
}

std::vector<VirtualElement> virtual_array(const AntennaArray& array) {
    validate_array(array);
    std::vector<VirtualElement> out;
    out.reserve(array.tx_positions.size() * array.rx_positions.size());
    for (size_t t = 0; t < array.tx_positions.size(); ++t)
        for (size_t r = 0; r < array.rx_positions.size(); ++r)
            out.push_back({static_cast<int>(t), static_cast<int>(r),
                           array.tx_positions[t] + array.rx_positions[r]});
    return out;
}

RadarPreset antenna_preset(const std::string& name) {
    RadarPreset p;
    if (name == "p2go24") {
        p.chirp.carrier_freq = 24e9;
        p.chirp.bandwidth = 200e6;
        p.chirp.duration = 300e-6;
        p.chirp.sample_rate = 1e6;
        const double h = 0.5 * kSpeedOfLight / p.chirp.carrier_freq; // lambda/2
        p.array.tx_positions = {{0.0, 0.0, 0.0}};
        p.array.rx_positions = {{h, 0.0, 0.0}, {2.0 * h, 0.0, 0.0}};
    } else if (name == "awr1843") {
        p.chirp.carrier_freq = 77e9;
        p.chirp.bandwidth = 4e9;
        p.chirp.duration = 40e-6;
        p.chirp.sample_rate = 16e6;
        const double h = 0.5 * kSpeedOfLight / p.chirp.carrier_freq;
        // TX at 2-lambda (4h) steps, RX at lambda/2: virtual positions tile
        // 0..11h contiguously, the standard 12-element azimuth line
        p.array.tx_positions = {{0.0, 0.0, 0.0}, {4.0 * h, 0.0, 0.0}, {8.0 * h, 0.0, 0.0}};
        p.array.rx_positions = {{0.0, 0.0, 0.0}, {h, 0.0, 0.0}, {2.0 * h, 0.0, 0.0},
                                {3.0 * h, 0.0, 0.0}};
    } else if (name == "vtrigb") {
        p.chirp.carrier_freq = 65.5e9;
        p.chirp.bandwidth = 6e9;
        p.chirp.duration = 50e-6;
        p.chirp.sample_rate = 20e6;
        const double h = 0.5 * kSpeedOfLight / p.chirp.carrier_freq;
        // TX line along y, RX line along x: virtual array is a 20x20 grid
        for (int i = 0; i < 20; ++i) p.array.tx_positions.push_back({0.0, i * h, 0.0});
        for (int i = 0; i < 20; ++i) p.array.rx_positions.push_back({i * h, 0.0, 0.0});
    } else {
        throw ConfigError("unknown antenna preset '" + name +
                          "' (known: awr1843, p2go24, vtrigb)");
    }
    validate_array(p.array);
    validate_chirp(p.chirp);
    return p;
}

} // namespace rfd
