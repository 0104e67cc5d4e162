#pragma once

#include "rfd/adgraph.hpp"

namespace rfd {

// One completed TX -> (bounces...) -> RX ray path. `amplitude` is the
// physical per-path factor (spreading, pattern gains, reflectivities,
// cosine projections); `weight` is the Monte Carlo measure factor of the
// ray that found the path (solid-angle share, 1/N, control-variate terms).
// The signal strength entering the IF sum is weight * amplitude, so both
// stay differentiable independently and deterministic paths (e.g. analytic
// test fixtures) simply use weight = 1.
struct PathRecord {
    DiffScalar tof;       // round-trip time of flight, seconds
    DiffComplex amplitude; // dimensionless voltage scale
    DiffScalar weight = DiffScalar{1.0};
    int tx_id = 0;
    int rx_id = 0;
    int bounce_count = 1;
};

} // namespace rfd
