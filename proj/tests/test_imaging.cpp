#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "rfd/antenna.hpp"
#include "rfd/constants.hpp"
#include "rfd/errors.hpp"
#include "rfd/imaging.hpp"
#include "rfd/rng.hpp"
#include "support.hpp"

using namespace rfd;
using namespace rfdtest;

namespace {

// One path per TX/RX pair toward a point scatterer, unit amplitude. The
// radar pose is identity so radar-local positions are world positions.
std::vector<PathRecord> point_target_paths(const AntennaArray& array, const Vec3& target) {
    std::vector<PathRecord> out;
    for (size_t i = 0; i < array.tx_positions.size(); ++i)
        for (size_t j = 0; j < array.rx_positions.size(); ++j) {
            PathRecord p;
            const double d = length(target - array.tx_positions[i]) +
                             length(target - array.rx_positions[j]);
            p.tof = DiffScalar{d / kSpeedOfLight};
            p.amplitude = DiffComplex{1.0, 0.0};
            p.tx_id = static_cast<int>(i);
            p.rx_id = static_cast<int>(j);
            out.push_back(p);
        }
    return out;
}

IFFrame point_target_frame(const RadarPreset& preset, const Vec3& target) {
    return synthesize(point_target_paths(preset.array, target), preset.chirp,
                      static_cast<int>(preset.array.tx_positions.size()),
                      static_cast<int>(preset.array.rx_positions.size()));
}

struct Voxel {
    int r = 0, a = 0, e = 0;
    double p = 0.0;
};

Voxel argmax_voxel(const SpatialImage& img) {
    Voxel best;
    best.p = -1.0;
    for (int r = 0; r < img.n_range; ++r)
        for (int a = 0; a < img.n_az; ++a)
            for (int e = 0; e < img.n_el; ++e)
                if (img.at(r, a, e).v > best.p) best = {r, a, e, img.at(r, a, e).v};
    return best;
}

// Direct DFT, the oracle for fft_pow2.
std::vector<std::complex<double>> brute_dft(const std::vector<std::complex<double>>& x,
                                            int sign) {
    const size_t n = x.size();
    std::vector<std::complex<double>> out(n);
    for (size_t m = 0; m < n; ++m) {
        std::complex<double> acc = 0.0;
        for (size_t k = 0; k < n; ++k)
            acc += x[k] * std::polar(1.0, sign * 2.0 * kPi * double(m * k % n) / double(n));
        out[m] = acc;
    }
    return out;
}

TriangleMesh unit_cube_mesh() {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({i & 1 ? 0.5 : -0.5, i & 2 ? 0.5 : -0.5, i & 4 ? 0.5 : -0.5});
    m.triangles.push_back({0, 1, 2}); // vertices are all register_init reads
    return m;
}

} // namespace

TEST_CASE("next_pow2 and radix-2 fft against a direct dft") {
    CHECK(next_pow2(1) == 1);
    CHECK(next_pow2(2) == 2);
    CHECK(next_pow2(3) == 4);
    CHECK(next_pow2(12) == 16);
    CHECK(next_pow2(256) == 256);
    CHECK(next_pow2(257) == 512);

    const uint64_t seed = 0xf00dULL;
    for (int n : {1, 2, 8, 64}) {
        for (int sign : {-1, +1}) {
            std::vector<std::complex<double>> x(n);
            for (int k = 0; k < n; ++k)
                x[k] = {2.0 * rng_uniform(seed, 1, n, k) - 1.0,
                        2.0 * rng_uniform(seed, 2, n, k) - 1.0};
            std::vector<DiffComplex> a;
            for (const auto& z : x) a.push_back(DiffComplex{z.real(), z.imag()});
            fft_pow2(a, sign);
            const auto want = brute_dft(x, sign);
            double scale = 1.0;
            for (const auto& w : want) scale = std::max(scale, std::abs(w));
            for (int m = 0; m < n; ++m) {
                CHECK(std::abs(std::complex<double>(a[m].re.v, a[m].im.v) - want[m]) <=
                      1e-12 * scale);
            }
        }
    }

    // inverse-direction transform undoes the forward one up to the factor n
    std::vector<DiffComplex> rt;
    for (int k = 0; k < 16; ++k)
        rt.push_back(DiffComplex{rng_uniform(7, 1, k), rng_uniform(7, 2, k)});
    const std::vector<DiffComplex> orig = rt;
    fft_pow2(rt, -1);
    fft_pow2(rt, +1);
    for (int k = 0; k < 16; ++k) {
        CHECK(rt[k].re.v == doctest::Approx(16.0 * orig[k].re.v).epsilon(1e-12));
        CHECK(rt[k].im.v == doctest::Approx(16.0 * orig[k].im.v).epsilon(1e-12));
    }

    std::vector<DiffComplex> bad(3, DiffComplex{0.0, 0.0});
    CHECK_THROWS_AS(fft_pow2(bad, -1), ContractViolation);
}

TEST_CASE("virtual elements map onto planar lattices") {
    SUBCASE("awr1843 is a 12-element azimuth line") {
        const RadarPreset p = antenna_preset("awr1843");
        const VirtualGrid g = map_virtual_grid(p.array);
        const double h = kSpeedOfLight / p.chirp.carrier_freq / 2.0;
        CHECK(g.nx == 12);
        CHECK(g.ny == 1);
        CHECK(g.dx == doctest::Approx(h).epsilon(1e-12));
        CHECK(g.dy == 0.0);
        REQUIRE(g.cell.size() == 12);
        for (int k = 0; k < 12; ++k) CHECK(g.cell[k] == k); // tx-major order is contiguous
        for (int occ : g.occupancy) CHECK(occ == 1);
    }
    SUBCASE("p2go24 is a 2-element line, vtrigb a 20x20 grid") {
        const VirtualGrid g2 = map_virtual_grid(antenna_preset("p2go24").array);
        CHECK(g2.nx == 2);
        CHECK(g2.ny == 1);
        const VirtualGrid g20 = map_virtual_grid(antenna_preset("vtrigb").array);
        CHECK(g20.nx == 20);
        CHECK(g20.ny == 20);
        CHECK(g20.cell.size() == 400);
        for (int occ : g20.occupancy) CHECK(occ == 1);
    }
    SUBCASE("lattice holes and overlaps are representable") {
        AntennaArray a;
        a.tx_positions = {{0, 0, 0}};
        a.rx_positions = {{0, 0, 0}, {0.002, 0, 0}, {0.006, 0, 0}};
        const VirtualGrid g = map_virtual_grid(a);
        CHECK(g.nx == 4); // slot at 0.004 is empty
        CHECK(g.occupancy == std::vector<int>{1, 1, 0, 1});

        AntennaArray b;
        b.tx_positions = {{0, 0, 0}, {0.002, 0, 0}};
        b.rx_positions = {{0, 0, 0}, {0.002, 0, 0}};
        const VirtualGrid gb = map_virtual_grid(b);
        CHECK(gb.nx == 3);
        CHECK(gb.occupancy == std::vector<int>{1, 2, 1}); // middle position hit twice
    }
    SUBCASE("off-lattice and non-planar arrays are rejected with positions") {
        AntennaArray a;
        a.tx_positions = {{0, 0, 0}};
        a.rx_positions = {{0, 0, 0}, {0.002, 0, 0}, {0.005, 0, 0}};
        CHECK_THROWS_WITH_AS(map_virtual_grid(a), doctest::Contains("0.005"), ConfigError);

        AntennaArray b;
        b.tx_positions = {{0, 0, 0.001}};
        b.rx_positions = {{0, 0, 0}, {0.002, 0, 0}};
        CHECK_THROWS_WITH_AS(map_virtual_grid(b), doctest::Contains("planar"), ConfigError);

        AntennaArray c;
        c.tx_positions = {{0, 0, 0}};
        c.rx_positions = {{0, 0, 0}, {0.002, 0, 0}, {20.0, 0, 0}};
        CHECK_THROWS_AS(map_virtual_grid(c), ConfigError);
    }
}

TEST_CASE("default processing dims double and round up to powers of two") {
    const ImageDims d1 = default_image_dims(antenna_preset("awr1843").chirp,
                                            antenna_preset("awr1843").array);
    CHECK(d1.n_range == 512);
    CHECK(d1.n_az == 32);
    CHECK(d1.n_el == 1);
    const ImageDims d2 = default_image_dims(antenna_preset("p2go24").chirp,
                                            antenna_preset("p2go24").array);
    CHECK(d2.n_range == 512);
    CHECK(d2.n_az == 4);
    CHECK(d2.n_el == 1);
    const ImageDims d3 = default_image_dims(antenna_preset("vtrigb").chirp,
                                            antenna_preset("vtrigb").array);
    CHECK(d3.n_range == 512);
    CHECK(d3.n_az == 64);
    CHECK(d3.n_el == 64);
}

TEST_CASE("spatial image dims are validated against the array") {
    const RadarPreset p = antenna_preset("awr1843");
    IFFrame frame = synthesize({}, p.chirp, 3, 4);
    CHECK_THROWS_AS(spatial_image(frame, p.array, {300, 32, 1}), ConfigError);
    CHECK_THROWS_AS(spatial_image(frame, p.array, {128, 32, 1}), ConfigError);
    CHECK_THROWS_AS(spatial_image(frame, p.array, {512, 8, 1}), ConfigError);
    CHECK_THROWS_AS(spatial_image(frame, p.array, {512, 32, 2}), ConfigError);

    IFFrame wrong = frame;
    wrong.samples.pop_back();
    CHECK_THROWS_AS(spatial_image(wrong, p.array, {512, 32, 1}), ContractViolation);
}

TEST_CASE("all-zero frame produces an all-zero volume") {
    const RadarPreset p = antenna_preset("awr1843");
    const IFFrame frame = synthesize({}, p.chirp, 3, 4);
    const SpatialImage img = spatial_image(frame, p.array, {512, 32, 1});
    CHECK(img.n_range == 512);
    CHECK(img.n_az == 32);
    CHECK(img.n_el == 1);
    for (const DiffScalar& v : img.power) CHECK(v.v == 0.0);
}

TEST_CASE("volume energy equals windowed frame energy times the fft sizes") {
    const RadarPreset p = antenna_preset("awr1843");
    IFFrame frame;
    frame.chirp = p.chirp;
    frame.n_tx = 3;
    frame.n_rx = 4;
    frame.samples.assign(12, std::vector<DiffComplex>(256, DiffComplex{0.0, 0.0}));
    for (int e = 0; e < 12; ++e)
        for (int k = 0; k < 256; ++k)
            frame.samples[e][k] = DiffComplex{2.0 * rng_uniform(99, 1, e, k) - 1.0,
                                              2.0 * rng_uniform(99, 2, e, k) - 1.0};

    const ImageDims dims{512, 32, 1};
    for (Window w : {Window::kHann, Window::kRect}) {
        const SpatialImage img = spatial_image(frame, p.array, dims, w);
        double total = 0.0;
        for (const DiffScalar& v : img.power) total += v.v;
        double in = 0.0;
        for (int e = 0; e < 12; ++e)
            for (int k = 0; k < 256; ++k) {
                const double wk =
                    w == Window::kHann ? 0.5 - 0.5 * std::cos(2.0 * kPi * k / 256.0) : 1.0;
                in += wk * wk * norm2(frame.samples[e][k]).v;
            }
        const double want = 512.0 * 32.0 * 1.0 * in;
        CHECK(rel_err(total, want) <= 1e-9);
    }
}

TEST_CASE("boresight point target lands at the predicted voxel") {
    const RadarPreset p = antenna_preset("awr1843");
    const IFFrame frame = point_target_frame(p, {0.0, 0.0, 5.0});
    const SpatialImage img = spatial_image(frame, p.array, {512, 32, 1});

    // beat bin = mu * (2 * 5 / c) / (fs / 512) = 106.74, so the argmax sits
    // at 107; boresight u = 0 is the center azimuth bin after the shift
    const double bin_m = (p.chirp.sample_rate / 512.0) * kSpeedOfLight / (2.0 * p.chirp.slope());
    CHECK(img.range_bin_m == doctest::Approx(bin_m).epsilon(1e-12));
    const Voxel top = argmax_voxel(img);
    CHECK(top.r == static_cast<int>(std::lround(5.0 / bin_m)));
    CHECK(top.r == 107);
    CHECK(top.a == 16);
    CHECK(top.e == 0);
    CHECK(img.u_az[16] == 0.0);
    CHECK(img.u_az[17] == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
    CHECK(std::abs(top.r * bin_m - 5.0) <= 2.0 * bin_m); // within one resolution cell
}

TEST_CASE("off-axis target lands at the matching angle bins") {
    SUBCASE("azimuth line array") {
        const RadarPreset p = antenna_preset("awr1843");
        // u = sin(azimuth) = 0.25 falls exactly on shifted bin 16 + 4
        const double u = 0.25, R = 5.0;
        const IFFrame frame = point_target_frame(p, {R * u, 0.0, R * std::sqrt(1.0 - u * u)});
        const SpatialImage img = spatial_image(frame, p.array, {512, 32, 1});
        const Voxel top = argmax_voxel(img);
        CHECK(top.a == 20);
        CHECK(img.u_az[top.a] == doctest::Approx(u).epsilon(1e-12));
        CHECK(top.r == 107);
    }
    SUBCASE("2x2 planar array resolves elevation sign") {
        const RadarPreset p = antenna_preset("awr1843");
        const double h = kSpeedOfLight / p.chirp.carrier_freq / 2.0;
        AntennaArray a;
        a.tx_positions = {{0, 0, 0}, {0, h, 0}};
        a.rx_positions = {{0, 0, 0}, {h, 0, 0}};
        const double ux = 0.25, uy = -0.25, R = 5.0;
        const Vec3 target{R * ux, R * uy, R * std::sqrt(1.0 - ux * ux - uy * uy)};
        const IFFrame frame = synthesize(point_target_paths(a, target), p.chirp, 2, 2);
        const SpatialImage img = spatial_image(frame, a, {512, 8, 8});
        const Voxel top = argmax_voxel(img);
        CHECK(top.a == 5); // 4 + 8 * u * (d / lambda) = 4 + 4u
        CHECK(top.e == 3);
        CHECK(img.u_az[top.a] == doctest::Approx(ux).epsilon(1e-12));
        CHECK(img.u_el[top.e] == doctest::Approx(uy).epsilon(1e-12));
    }
}

TEST_CASE("moving the target 1 m shifts the argmax by the bin arithmetic") {
    // samples span the whole chirp here, so the swept bandwidth seen by the
    // sampler is the full B and the textbook bin spacing c/(2B)/padfactor
    // applies exactly
    RadarPreset p = antenna_preset("awr1843");
    p.chirp.bandwidth = 1.6e9;
    p.chirp.duration = 16e-6;
    validate_chirp(p.chirp);

    const SpatialImage at5 =
        spatial_image(point_target_frame(p, {0, 0, 5.0}), p.array, {512, 32, 1});
    const SpatialImage at6 =
        spatial_image(point_target_frame(p, {0, 0, 6.0}), p.array, {512, 32, 1});
    const int r5 = argmax_voxel(at5).r;
    const int r6 = argmax_voxel(at6).r;

    const double cell = kSpeedOfLight / (2.0 * p.chirp.bandwidth) / 2.0; // 2x zero-pad
    CHECK(at5.range_bin_m == doctest::Approx(cell).epsilon(1e-12));
    CHECK(r6 - r5 == static_cast<int>(std::lround(1.0 / cell)));
    CHECK(r6 - r5 == 21);
}

TEST_CASE("volumes of well-separated targets add almost linearly") {
    const RadarPreset p = antenna_preset("awr1843");
    const auto pa = point_target_paths(p.array, {0, 0, 4.0});
    const auto pb = point_target_paths(p.array, {0, 0, 7.0});
    auto both = pa;
    both.insert(both.end(), pb.begin(), pb.end());

    const ImageDims dims{512, 32, 1};
    const SpatialImage va = spatial_image(synthesize(pa, p.chirp, 3, 4), p.array, dims);
    const SpatialImage vb = spatial_image(synthesize(pb, p.chirp, 3, 4), p.array, dims);
    const SpatialImage vab = spatial_image(synthesize(both, p.chirp, 3, 4), p.array, dims);

    double peak = 0.0;
    for (const DiffScalar& v : vab.power) peak = std::max(peak, v.v);
    REQUIRE(peak > 0.0);
    double worst = 0.0;
    for (size_t i = 0; i < vab.power.size(); ++i)
        worst = std::max(worst, std::abs(vab.power[i].v - va.power[i].v - vb.power[i].v));
    CHECK(worst <= 0.01 * peak); // cross terms are sidelobe-sized only
}

TEST_CASE("voxel power gradients match finite differences of the pipeline") {
    const RadarPreset p = antenna_preset("awr1843");
    const Vec3 base{0.3, 0.0, 5.0};
    const ImageDims dims{512, 32, 1};

    // plain pipeline as a function of the target x offset
    auto voxel_value = [&](double x, int r, int a) {
        const IFFrame f = point_target_frame(p, {x, base.y, base.z});
        return spatial_image(f, p.array, dims).at(r, a, 0).v;
    };

    const IFFrame plain = point_target_frame(p, base);
    const SpatialImage img = spatial_image(plain, p.array, dims);
    const Voxel top = argmax_voxel(img);

    // same scene with the x coordinate as a tape parameter
    Tape tape;
    const DVec3 target{tape.register_parameter(base.x), DiffScalar{base.y}, DiffScalar{base.z}};
    std::vector<PathRecord> paths;
    for (size_t i = 0; i < p.array.tx_positions.size(); ++i)
        for (size_t j = 0; j < p.array.rx_positions.size(); ++j) {
            PathRecord rec;
            const DiffScalar d = length(target - to_diff(p.array.tx_positions[i])) +
                                 length(target - to_diff(p.array.rx_positions[j]));
            rec.tof = d / DiffScalar{kSpeedOfLight};
            rec.amplitude = DiffComplex{1.0, 0.0};
            rec.tx_id = static_cast<int>(i);
            rec.rx_id = static_cast<int>(j);
            paths.push_back(rec);
        }
    const IFFrame taped = synthesize(paths, p.chirp, 3, 4);
    const SpatialImage timg = spatial_image(taped, p.array, dims);

    const int shoulders[4][2] = {{top.r - 1, top.a}, {top.r + 1, top.a},
                                 {top.r, top.a - 1}, {top.r, top.a + 1}};
    for (const auto& s : shoulders) {
        const int r = s[0], a = s[1];
        CHECK(timg.at(r, a, 0).v == img.at(r, a, 0).v); // same forward arithmetic
        tape.backward(timg.at(r, a, 0));
        const double ad = tape.parameter_gradients()[0];
        const double fd = central_fd([&](double x) { return voxel_value(x, r, a); }, base.x, 1e-5);
        CHECK(std::abs(ad) > 0.0);
        CHECK(rel_err(ad, fd) <= 1e-3);
    }
}

TEST_CASE("cfar extraction finds point targets and stays deterministic") {
    const RadarPreset p = antenna_preset("awr1843");
    const ImageDims dims{512, 32, 1};

    SUBCASE("single target gives one cluster near the truth") {
        const SpatialImage img =
            spatial_image(point_target_frame(p, {0, 0, 5.0}), p.array, dims);
        const PointCloud cloud = extract_pointcloud(img);
        REQUIRE(cloud.points.size() == 1);
        CHECK(cloud.source == PointCloud::Source::kExtracted);
        const CloudPoint& pt = cloud.points[0];
        CHECK(std::abs(pt.z - 5.0) <= 2.0 * img.range_bin_m);
        // one angle bin of slack at 5 m is 5 * (1/16) m of cross-range
        CHECK(std::abs(pt.x) <= 5.0 / 16.0);
        CHECK(std::abs(pt.y) <= 1e-9);
        CHECK(pt.intensity > 0.0);

        const PointCloud again = extract_pointcloud(img);
        REQUIRE(again.points.size() == 1);
        CHECK(again.points[0].x == pt.x);
        CHECK(again.points[0].z == pt.z);
        CHECK(again.points[0].intensity == pt.intensity);
    }
    SUBCASE("two targets five range bins apart stay separate clusters") {
        const double d1 = 107 * 0.0468428; // on-bin ranges, 5 image bins apart
        const double d2 = 112 * 0.0468428;
        auto paths = point_target_paths(p.array, {0, 0, d1});
        const auto more = point_target_paths(p.array, {0, 0, d2});
        paths.insert(paths.end(), more.begin(), more.end());
        const SpatialImage img =
            spatial_image(synthesize(paths, p.chirp, 3, 4), p.array, dims);
        const PointCloud cloud = extract_pointcloud(img);
        REQUIRE(cloud.points.size() == 2);
        std::vector<double> zs{cloud.points[0].z, cloud.points[1].z};
        std::sort(zs.begin(), zs.end());
        CHECK(std::abs(zs[0] - d1) <= 2.0 * img.range_bin_m);
        CHECK(std::abs(zs[1] - d2) <= 2.0 * img.range_bin_m);
    }
    SUBCASE("all-zero volume yields an empty cloud") {
        const SpatialImage img = spatial_image(synthesize({}, p.chirp, 3, 4), p.array, dims);
        CHECK(extract_pointcloud(img).points.empty());
    }
    SUBCASE("noise-only volumes produce only a handful of false alarms") {
        // amplitude-statistic CFAR at scale 4; the same scale applied to
        // power would flag a few percent of the 16384 cells
        IFFrame frame;
        frame.chirp = p.chirp;
        frame.n_tx = 3;
        frame.n_rx = 4;
        frame.samples.assign(12, std::vector<DiffComplex>(256, DiffComplex{0.0, 0.0}));
        for (int e = 0; e < 12; ++e)
            for (int k = 0; k < 256; ++k)
                frame.samples[e][k] = DiffComplex{rng_gaussian(1234, 7, e, k),
                                                  rng_gaussian(1234, 8, e, k)};
        const SpatialImage img = spatial_image(frame, p.array, dims);
        CHECK(extract_pointcloud(img).points.size() <= 10);
    }
    SUBCASE("bad cfar parameters are rejected") {
        const SpatialImage img = spatial_image(synthesize({}, p.chirp, 3, 4), p.array, dims);
        CfarConfig bad;
        bad.train = 0;
        CHECK_THROWS_AS(extract_pointcloud(img, bad), ConfigError);
    }
}

TEST_CASE("noise at 10 dB does not move the range estimate") {
    const RadarPreset p = antenna_preset("awr1843");
    const IFFrame clean = point_target_frame(p, {0, 0, 5.0});
    const IFFrame noisy = add_noise(clean, 10.0, 2024);
    const ImageDims dims{512, 32, 1};
    const Voxel a = argmax_voxel(spatial_image(clean, p.array, dims));
    const Voxel b = argmax_voxel(spatial_image(noisy, p.array, dims));
    CHECK(std::abs(a.r - b.r) < 2);
}

TEST_CASE("registration initializer aligns centroids and clamps scale") {
    const TriangleMesh cube = unit_cube_mesh();

    SUBCASE("cloud equal to the template registers to identity") {
        PointCloud cloud;
        for (const Vec3& v : cube.vertices) cloud.points.push_back({v.x, v.y, v.z, 1.0});
        const RigidPlain pose = register_init(cloud, cube);
        CHECK(std::abs(pose.translation.x) <= 1e-12);
        CHECK(std::abs(pose.translation.y) <= 1e-12);
        CHECK(std::abs(pose.translation.z) <= 1e-12);
        CHECK(pose.scale == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(length(pose.rotation) == 0.0);
    }
    SUBCASE("shifted cloud turns into a translation") {
        PointCloud cloud;
        for (const Vec3& v : cube.vertices) cloud.points.push_back({v.x + 2.0, v.y, v.z, 1.0});
        const RigidPlain pose = register_init(cloud, cube);
        CHECK(pose.translation.x == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(std::abs(pose.translation.y) <= 1e-12);
    }
    SUBCASE("intensity weights the centroid") {
        PointCloud cloud;
        cloud.points.push_back({0, 0, 0, 3.0});
        cloud.points.push_back({0, 0, 4.0, 1.0});
        const RigidPlain pose = register_init(cloud, cube);
        CHECK(pose.translation.z == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("scale ratio is clamped at both ends") {
        PointCloud big;
        for (const Vec3& v : cube.vertices)
            big.points.push_back({5.0 * v.x, 5.0 * v.y, 5.0 * v.z, 1.0});
        CHECK(register_init(big, cube).scale == 2.0);

        PointCloud single;
        single.points.push_back({1.0, 2.0, 3.0, 1.0});
        const RigidPlain pose = register_init(single, cube);
        CHECK(pose.scale == 0.5);
        CHECK(pose.translation.x == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("empty or invalid clouds are configuration errors") {
        CHECK_THROWS_AS(register_init(PointCloud{}, cube), ConfigError);
        PointCloud bad;
        bad.points.push_back({0, 0, 0, 0.0});
        CHECK_THROWS_AS(register_init(bad, cube), ConfigError);
    }
}

TEST_CASE("volume files round-trip through float32 plus sidecar") {
    SpatialImage img;
    img.n_range = 4;
    img.n_az = 2;
    img.n_el = 1;
    img.range_bin_m = 0.5;
    img.u_az = {-0.5, 0.0};
    img.u_el = {0.0};
    for (int i = 0; i < 8; ++i) img.power.push_back(DiffScalar{1.0 + 0.25 * i});

    const std::string path = "test_volume.f32";
    write_volume(path, img);

    std::ifstream bin(path, std::ios::binary | std::ios::ate);
    REQUIRE(bin.good());
    CHECK(bin.tellg() == std::streamoff(8 * 4));
    bin.seekg(0);
    for (int i = 0; i < 8; ++i) {
        unsigned char b[4];
        bin.read(reinterpret_cast<char*>(b), 4);
        uint32_t u = 0;
        for (int s = 0; s < 4; ++s) u |= uint32_t(b[s]) << (8 * s);
        float f;
        std::memcpy(&f, &u, 4);
        CHECK(double(f) == doctest::Approx(img.power[i].v).epsilon(1e-7));
    }

    std::ifstream side("test_volume.json");
    REQUIRE(side.good());
    std::stringstream ss;
    ss << side.rdbuf();
    const std::string meta = ss.str();
    CHECK(meta.find("vol-float32-le") != std::string::npos);
    CHECK(meta.find("range_bin_m") != std::string::npos);

    CHECK_THROWS_AS(write_volume("no_such_dir/x.f32", img), ConfigError);
    std::remove(path.c_str());
    std::remove("test_volume.json");
}

TEST_CASE("point clouds round-trip through csv") {
    PointCloud cloud;
    cloud.source = PointCloud::Source::kExtracted;
    cloud.points.push_back({1.25, -2.5, 3.75, 0.125});
    cloud.points.push_back({-0.001, 0.002, 12.5, 42.0});

    const std::string path = "test_cloud.csv";
    write_pointcloud_csv(path, cloud);
    const PointCloud back = read_pointcloud_csv(path);
    CHECK(back.source == PointCloud::Source::kMeasured);
    REQUIRE(back.points.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(back.points[i].x == cloud.points[i].x);
        CHECK(back.points[i].y == cloud.points[i].y);
        CHECK(back.points[i].z == cloud.points[i].z);
        CHECK(back.points[i].intensity == cloud.points[i].intensity);
    }

    {
        std::ifstream is(path);
        std::string header;
        std::getline(is, header);
        CHECK(header == "x,y,z,intensity");
    }

    std::ofstream(path) << "x,y,z,intensity\n1,2,3\n";
    CHECK_THROWS_AS(read_pointcloud_csv(path), ConfigError);
    std::ofstream(path) << "x,y,z,intensity\n1,2,3,-4\n";
    CHECK_THROWS_AS(read_pointcloud_csv(path), ConfigError);
    CHECK_THROWS_AS(read_pointcloud_csv("no_such_cloud.csv"), ConfigError);
    std::remove(path.c_str());
}

TEST_CASE("spatial imaging is bitwise deterministic") {
    const RadarPreset p = antenna_preset("awr1843");
    const IFFrame frame = point_target_frame(p, {0.7, 0.0, 6.5});
    const ImageDims dims{512, 32, 1};
    const SpatialImage a = spatial_image(frame, p.array, dims);
    const SpatialImage b = spatial_image(frame, p.array, dims);
    REQUIRE(a.power.size() == b.power.size());
    for (size_t i = 0; i < a.power.size(); ++i) CHECK(a.power[i].v == b.power[i].v);
}
