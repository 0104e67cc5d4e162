#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfd/antenna.hpp"
#include "rfd/geometry.hpp"
#include "rfd/ifsignal.hpp"

// Radar signal processing: IF frames to 3D range-azimuth-elevation power
// volumes (differentiable), plus point-cloud extraction and coarse
// registration for optimizer initialization (plain values only).

namespace rfd {

// Normalized-direction power volume with axis metadata. Voxel (r, a, e)
// holds squared magnitude; the grid is row-major with elevation fastest.
// Range bin r maps to r * range_bin_m meters; angle bins map to normalized
// directions u = sin(angle) via u_az/u_el (fftshifted, so the center bin is
// boresight). Angle axes of size 1 are degenerate (single boresight bin).
struct SpatialImage {
    int n_range = 0;
    int n_az = 0;
    int n_el = 0;
    std::vector<DiffScalar> power;
    double range_bin_m = 0.0;
    std::vector<double> u_az, u_el;

    DiffScalar& at(int r, int a, int e) {
        return power[(static_cast<size_t>(r) * n_az + a) * n_el + e];
    }
    const DiffScalar& at(int r, int a, int e) const {
        return power[(static_cast<size_t>(r) * n_az + a) * n_el + e];
    }
};

enum class Window { kRect, kHann };

struct ImageDims {
    int n_range = 0; // fast-time FFT size
    int n_az = 0;    // azimuth FFT size
    int n_el = 0;    // elevation FFT size
};

// How the virtual elements sit on their planar lattice: cell[i] is element
// i's slot (iy * nx + ix). The lattice constant is the smallest gap between
// occupied coordinates, so sparse arrays with holes map fine as long as
// every coordinate lands on a multiple of that gap.
struct VirtualGrid {
    int nx = 1, ny = 1;
    double dx = 0.0, dy = 0.0; // spacing in meters, 0 on a degenerate axis
    double x0 = 0.0, y0 = 0.0;
    std::vector<int> cell;
    std::vector<int> occupancy; // per cell, for duplicate averaging
};

// Throws ConfigError (listing the positions) when the virtual elements are
// not coplanar (z != 0 in the radar frame) or miss the lattice.
VirtualGrid map_virtual_grid(const AntennaArray& array);

// In-place radix-2 FFT over tape-aware complex values; size must be a power
// of two. sign -1 is the forward transform, +1 the conjugate one. No 1/N
// factor either way.
void fft_pow2(std::vector<DiffComplex>& a, int sign);

int next_pow2(int n);

// Default processing dims: 2x zero-padding rounded up to powers of two,
// single-bin axes kept degenerate.
ImageDims default_image_dims(const ChirpConfig& chirp, const AntennaArray& array);

// Windowed zero-padded DFT along fast time, then conjugate DFTs across the
// two virtual-array axes, fftshifted; output is per-voxel squared magnitude
// and differentiable end to end. Every dim must be a power of two, at least
// as large as what it transforms, and exactly 1 on degenerate axes.
// Duplicate virtual positions (overlapped subarrays) are averaged; lattice
// holes contribute zeros. Frames with no tape attached are processed with
// element-parallel plain arithmetic.
SpatialImage spatial_image(const IFFrame& frame, const AntennaArray& array, ImageDims dims,
                           Window window = Window::kHann);

struct CloudPoint {
    double x = 0.0, y = 0.0, z = 0.0;
    double intensity = 0.0;
};

struct PointCloud {
    enum class Source { kMeasured, kExtracted };
    std::vector<CloudPoint> points;
    Source source = Source::kExtracted;
};

// Cell-averaging CFAR along range, applied per angular bin; the same gate
// runs along each non-degenerate angle axis so the angular sidelobes of a
// strong return do not register (the range-only pass cannot tell a sidelobe
// from its parent: the whole range profile just scales). The detection
// statistic is voxel amplitude (sqrt of power): at scale 4.0 a noise-only
// volume fires on only a handful of cells, where the same scale on power
// would flag a few percent of them.
struct CfarConfig {
    int train = 8;
    int guard = 2;
    double scale = 4.0;
    // Absolute floor relative to the scene peak. Noise-free synthetic
    // volumes have rounding dust in empty regions whose local ratios are
    // arbitrary, so plain CA-CFAR would fire there.
    double min_rel_power = 1e-9;
};

// Detected voxels are merged into 26-connected clusters; each cluster
// yields one point at its power-weighted centroid (radar-local coordinates,
// boresight +z) with the cluster's total power as intensity. Clusters
// landing outside the visible cone |u| > 1 are dropped. Deterministic, and
// never on the tape: initialization only.
PointCloud extract_pointcloud(const SpatialImage& image, const CfarConfig& cfar = {});

// Coarse pose initialization: translation moves the template centroid onto
// the cloud's intensity-weighted centroid, scale is the bounding-radius
// ratio clamped to [0.5, 2], rotation stays identity. Throws ConfigError on
// an empty cloud (caller falls back to its configured prior).
RigidT<double> register_init(const PointCloud& cloud, const TriangleMesh& mesh);

// Volume export: float32 little-endian voxels in memory order plus a JSON
// sidecar (shape, bin scales). Point clouds go through CSV with an
// "x,y,z,intensity" header; read_pointcloud_csv validates finiteness and
// positive intensity and marks the cloud as measured.
void write_volume(const std::string& path, const SpatialImage& image);
void write_pointcloud_csv(const std::string& path, const PointCloud& cloud);
PointCloud read_pointcloud_csv(const std::string& path);

} // namespace rfd
