#pragma once

#include <sstream>
#include <string>

#include "rfd/constants.hpp"
#include "rfd/errors.hpp"

namespace rfd {

// One FMCW chirp: a linear frequency sweep of `bandwidth` Hz over `duration`
// seconds starting at `carrier_freq`, dechirped and sampled at `sample_rate`.
// The slope mu = B/T is derived on demand so the two never drift apart.
struct ChirpConfig {
    double carrier_freq = 77e9; // f_c, Hz
    double bandwidth = 4e9;     // B, Hz swept
    double duration = 40e-6;    // T, s
    double sample_rate = 16e6;  // f_s, Hz (complex I/Q rate)
    int n_samples = 256;

    double slope() const { return bandwidth / duration; } // mu, Hz/s

    // Two targets closer than c/(2B) merge into one beat line.
    double range_resolution() const { return kSpeedOfLight / (2.0 * bandwidth); }

    // Highest beat frequency representable without aliasing (complex
    // sampling: the usable band is [0, f_s/2) for positive-range targets).
    double max_beat() const { return 0.5 * sample_rate; }

    // Round-trip range whose beat mu*2d/c lands at max_beat().
    double max_range() const { return max_beat() * kSpeedOfLight / (2.0 * slope()); }

    double sample_time(int k) const { return k / sample_rate; }
};

inline void validate_chirp(const ChirpConfig& c) {
    auto bad = [](const std::string& what, double v) {
        std::ostringstream os;
        os << "chirp: " << what << " must be positive, got " << v;
        throw ConfigError(os.str());
    };
    if (!(c.carrier_freq > 0.0)) bad("carrier_freq", c.carrier_freq);
    if (!(c.bandwidth > 0.0)) bad("bandwidth", c.bandwidth);
    if (!(c.duration > 0.0)) bad("duration", c.duration);
    if (!(c.sample_rate > 0.0)) bad("sample_rate", c.sample_rate);
    if (c.n_samples < 1) {
        std::ostringstream os;
        os << "chirp: n_samples must be >= 1, got " << c.n_samples;
        throw ConfigError(os.str());
    }
    if (c.n_samples / c.sample_rate > c.duration * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "chirp: acquisition window n_samples/sample_rate = "
           << c.n_samples / c.sample_rate << " s exceeds chirp duration " << c.duration << " s";
        throw ConfigError(os.str());
    }
}

// Rejects setups where a target at `max_range_m` would alias instead of
// silently wrapping its beat frequency.
inline void require_unambiguous(const ChirpConfig& c, double max_range_m) {
    validate_chirp(c);
    if (!(max_range_m > 0.0)) {
        std::ostringstream os;
        os << "chirp: max range must be positive, got " << max_range_m;
        throw ConfigError(os.str());
    }
    const double beat = c.slope() * 2.0 * max_range_m / kSpeedOfLight;
    if (beat >= c.max_beat()) {
        std::ostringstream os;
        os << "chirp: beat " << beat << " Hz at range " << max_range_m
           << " m reaches the Nyquist limit " << c.max_beat()
           << " Hz; raise sample_rate or reduce slope (max unambiguous range "
           << c.max_range() << " m)";
        throw ConfigError(os.str());
    }
}

} // namespace rfd
