#include "rfd/imaging.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "rfd/constants.hpp"
#include "rfd/errors.hpp"

namespace rfd {

namespace {

constexpr double kCoordTol = 1e-9; // meters; element positions are mm-scale

std::string list_positions(const std::vector<VirtualElement>& virt) {
    std::ostringstream os;
    for (const VirtualElement& e : virt)
        os << " (" << e.position.x << ", " << e.position.y << ", " << e.position.z << ")";
    return os.str();
}

// Unique sorted coordinates along one axis, then the lattice constant as the
// smallest occupied gap. Returns {origin, spacing, count}; spacing 0 and
// count 1 for a degenerate axis.
struct Lattice {
    double origin = 0.0;
    double step = 0.0;
    int count = 1;
};

Lattice fit_lattice(std::vector<double> coords, const std::string& axis,
                    const std::string& where) {
    std::sort(coords.begin(), coords.end());
    std::vector<double> uniq;
    for (double c : coords)
        if (uniq.empty() || c - uniq.back() > kCoordTol) uniq.push_back(c);
    Lattice lat;
    lat.origin = uniq.front();
    if (uniq.size() == 1) return lat;

    double step = std::numeric_limits<double>::infinity();
    for (size_t i = 1; i < uniq.size(); ++i) step = std::min(step, uniq[i] - uniq[i - 1]);
    const double span = uniq.back() - uniq.front();
    const double slots = span / step;
    if (slots > 4096.0)
        throw ConfigError("virtual array " + axis + " coordinates span " +
                          std::to_string(slots) + " lattice steps; not grid-mappable:" + where);
    const double tol = std::max(kCoordTol, 1e-6 * step);
    for (double c : uniq) {
        const double k = (c - lat.origin) / step;
        if (std::abs(k - std::round(k)) * step > tol)
            throw ConfigError("virtual array " + axis + " coordinate " + std::to_string(c) +
                              " misses the lattice; element positions:" + where);
    }
    lat.step = step;
    lat.count = static_cast<int>(std::llround(slots)) + 1;
    return lat;
}

std::vector<double> hann_window(int n) {
    // periodic form, consistent with the DFT bins
    std::vector<double> w(n, 1.0);
    if (n > 1)
        for (int k = 0; k < n; ++k) w[k] = 0.5 - 0.5 * std::cos(2.0 * kPi * k / n);
    return w;
}

bool is_pow2(int n) { return n >= 1 && (n & (n - 1)) == 0; }

void fftshift(std::vector<DiffComplex>& a) {
    const size_t n = a.size();
    if (n < 2) return;
    std::rotate(a.begin(), a.begin() + n / 2, a.end());
}

bool frame_on_tape(const IFFrame& frame) {
    for (const auto& row : frame.samples)
        for (const DiffComplex& z : row)
            if (!z.is_const()) return true;
    return false;
}

} // namespace

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

VirtualGrid map_virtual_grid(const AntennaArray& array) {
    validate_array(array);
    const auto virt = virtual_array(array);
    for (const VirtualElement& e : virt)
        if (std::abs(e.position.z) > kCoordTol)
            throw ConfigError("virtual array is not planar (z != 0); element positions:" +
                              list_positions(virt));

    std::vector<double> xs, ys;
    for (const VirtualElement& e : virt) {
        xs.push_back(e.position.x);
        ys.push_back(e.position.y);
    }
    const std::string where = list_positions(virt);
    const Lattice lx = fit_lattice(xs, "x", where);
    const Lattice ly = fit_lattice(ys, "y", where);

    VirtualGrid g;
    g.nx = lx.count;
    g.ny = ly.count;
    g.dx = lx.step;
    g.dy = ly.step;
    g.x0 = lx.origin;
    g.y0 = ly.origin;
    g.occupancy.assign(static_cast<size_t>(g.nx) * g.ny, 0);
    for (const VirtualElement& e : virt) {
        const int ix = lx.step > 0.0
                           ? static_cast<int>(std::llround((e.position.x - lx.origin) / lx.step))
                           : 0;
        const int iy = ly.step > 0.0
                           ? static_cast<int>(std::llround((e.position.y - ly.origin) / ly.step))
                           : 0;
        g.cell.push_back(iy * g.nx + ix);
        ++g.occupancy[iy * g.nx + ix];
    }
    return g;
}

void fft_pow2(std::vector<DiffComplex>& a, int sign) {
    const size_t n = a.size();
    if (!is_pow2(static_cast<int>(n)))
        throw ContractViolation("fft_pow2: size must be a power of two");
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j |= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const size_t half = len / 2;
        std::vector<DiffComplex> w(half);
        for (size_t k = 0; k < half; ++k) {
            const double ang = sign * 2.0 * kPi * static_cast<double>(k) / static_cast<double>(len);
            w[k] = DiffComplex{std::cos(ang), std::sin(ang)};
        }
        for (size_t i = 0; i < n; i += len)
            for (size_t k = 0; k < half; ++k) {
                const DiffComplex u = a[i + k];
                const DiffComplex v = a[i + k + half] * w[k];
                a[i + k] = u + v;
                a[i + k + half] = u - v;
            }
    }
}

ImageDims default_image_dims(const ChirpConfig& chirp, const AntennaArray& array) {
    const VirtualGrid g = map_virtual_grid(array);
    ImageDims d;
    d.n_range = next_pow2(2 * chirp.n_samples);
    d.n_az = g.nx == 1 ? 1 : next_pow2(2 * g.nx);
    d.n_el = g.ny == 1 ? 1 : next_pow2(2 * g.ny);
    return d;
}

SpatialImage spatial_image(const IFFrame& frame, const AntennaArray& array, ImageDims dims,
                           Window window) {
    validate_chirp(frame.chirp);
    const auto virt = virtual_array(array);
    if (static_cast<int>(virt.size()) != frame.n_virtual() ||
        frame.samples.size() != virt.size())
        throw ContractViolation("spatial_image: frame element count does not match the array");
    for (const auto& row : frame.samples)
        if (static_cast<int>(row.size()) != frame.chirp.n_samples)
            throw ContractViolation("spatial_image: frame row length does not match the chirp");

    const VirtualGrid grid = map_virtual_grid(array);
    auto check_dim = [](int dim, int need, bool degenerate, const char* name) {
        std::ostringstream os;
        if (!is_pow2(dim)) {
            os << "spatial_image: " << name << " = " << dim << " is not a power of two";
            throw ConfigError(os.str());
        }
        if (dim < need) {
            os << "spatial_image: " << name << " = " << dim << " is smaller than the " << need
               << " bins it must hold";
            throw ConfigError(os.str());
        }
        if (degenerate && dim != 1) {
            os << "spatial_image: " << name << " = " << dim
               << " but the array is degenerate along that axis (use 1)";
            throw ConfigError(os.str());
        }
    };
    check_dim(dims.n_range, frame.chirp.n_samples, false, "n_range");
    check_dim(dims.n_az, grid.nx, grid.nx == 1, "n_az");
    check_dim(dims.n_el, grid.ny, grid.ny == 1, "n_el");

    const int NR = dims.n_range;
    const int NA = dims.n_az;
    const int NE = dims.n_el;
    const std::vector<double> win =
        window == Window::kHann ? hann_window(frame.chirp.n_samples)
                                : std::vector<double>(frame.chirp.n_samples, 1.0);

    // fast-time FFT per element
    const int n_elem = static_cast<int>(virt.size());
    std::vector<std::vector<DiffComplex>> rspec(n_elem);
    const bool taped = frame_on_tape(frame);
    auto range_fft = [&](int e) {
        std::vector<DiffComplex> buf(NR, DiffComplex{0.0, 0.0});
        for (int k = 0; k < frame.chirp.n_samples; ++k)
            buf[k] = DiffScalar{win[k]} * frame.samples[e][k];
        fft_pow2(buf, -1);
        rspec[e] = std::move(buf);
    };
    if (taped) {
        for (int e = 0; e < n_elem; ++e) range_fft(e);
    } else {
#pragma omp parallel for schedule(static)
        for (int e = 0; e < n_elem; ++e) range_fft(e);
    }

    SpatialImage img;
    img.n_range = NR;
    img.n_az = NA;
    img.n_el = NE;
    img.power.assign(static_cast<size_t>(NR) * NA * NE, DiffScalar{0.0});
    img.range_bin_m =
        (frame.chirp.sample_rate / NR) * kSpeedOfLight / (2.0 * frame.chirp.slope());
    const double lambda = kSpeedOfLight / frame.chirp.carrier_freq;
    img.u_az.assign(NA, 0.0);
    img.u_el.assign(NE, 0.0);
    if (grid.nx > 1)
        for (int m = 0; m < NA; ++m) img.u_az[m] = (m - NA / 2) * lambda / (NA * grid.dx);
    if (grid.ny > 1)
        for (int m = 0; m < NE; ++m) img.u_el[m] = (m - NE / 2) * lambda / (NE * grid.dy);

    // per range bin: place elements on the grid, transform both angle axes
    auto angle_slice = [&](int r) {
        std::vector<std::vector<DiffComplex>> cells(
            grid.ny, std::vector<DiffComplex>(grid.nx, DiffComplex{0.0, 0.0}));
        for (int e = 0; e < n_elem; ++e) {
            const int c = grid.cell[e];
            DiffComplex& slot = cells[c / grid.nx][c % grid.nx];
            DiffComplex v = rspec[e][r];
            if (grid.occupancy[c] > 1)
                v = DiffScalar{1.0 / grid.occupancy[c]} * v; // average overlapped subarrays
            slot = slot + v;
        }
        // azimuth per row, then elevation per column; conjugate sign puts
        // increasing u at increasing (shifted) bin
        std::vector<std::vector<DiffComplex>> az(grid.ny);
        for (int iy = 0; iy < grid.ny; ++iy) {
            std::vector<DiffComplex> rowbuf(NA, DiffComplex{0.0, 0.0});
            for (int ix = 0; ix < grid.nx; ++ix) rowbuf[ix] = cells[iy][ix];
            fft_pow2(rowbuf, +1);
            fftshift(rowbuf);
            az[iy] = std::move(rowbuf);
        }
        for (int a = 0; a < NA; ++a) {
            std::vector<DiffComplex> colbuf(NE, DiffComplex{0.0, 0.0});
            for (int iy = 0; iy < grid.ny; ++iy) colbuf[iy] = az[iy][a];
            fft_pow2(colbuf, +1);
            fftshift(colbuf);
            for (int el = 0; el < NE; ++el) img.at(r, a, el) = norm2(colbuf[el]);
        }
    };
    if (taped) {
        for (int r = 0; r < NR; ++r) angle_slice(r);
    } else {
#pragma omp parallel for schedule(static)
        for (int r = 0; r < NR; ++r) angle_slice(r);
    }
    return img;
}

PointCloud extract_pointcloud(const SpatialImage& image, const CfarConfig& cfar) {
    if (cfar.train < 1 || cfar.guard < 0 || !(cfar.scale > 0.0) || !(cfar.min_rel_power >= 0.0))
        throw ConfigError("extract_pointcloud: cfar needs train >= 1, guard >= 0, scale > 0");
    if (image.power.empty()) throw ContractViolation("extract_pointcloud: empty image");

    const int NR = image.n_range, NA = image.n_az, NE = image.n_el;
    double peak = 0.0;
    for (const DiffScalar& p : image.power) peak = std::max(peak, p.v);
    const double floor_power = peak * cfar.min_rel_power;

    // Cell-averaging gate along one axis (0 range, 1 azimuth, 2 elevation).
    // The detection statistic is amplitude, not power: scale 4.0 on Rayleigh
    // noise amplitudes keeps false cells single-digit. Axes too short to
    // train on pass by default.
    const auto amp_at = [&](int r, int a, int e) { return std::sqrt(image.at(r, a, e).v); };
    const auto gate = [&](int r, int a, int e, int axis) {
        double acc = 0.0;
        int cnt = 0;
        for (int s = -1; s <= 1; s += 2)
            for (int t = cfar.guard + 1; t <= cfar.guard + cfar.train; ++t) {
                int rr = r, aa = a, ee = e;
                (axis == 0 ? rr : axis == 1 ? aa : ee) += s * t;
                if (rr < 0 || rr >= NR || aa < 0 || aa >= NA || ee < 0 || ee >= NE) continue;
                acc += amp_at(rr, aa, ee);
                ++cnt;
            }
        if (cnt == 0) return true;
        return amp_at(r, a, e) > cfar.scale * (acc / cnt);
    };

    std::vector<char> hit(image.power.size(), 0);
    for (int a = 0; a < NA; ++a)
        for (int e = 0; e < NE; ++e)
            for (int r = 0; r < NR; ++r) {
                const double p = image.at(r, a, e).v;
                if (!(p > floor_power) || !(p > 0.0)) continue;
                if (!gate(r, a, e, 0)) continue;
                // the same gate across the angle axes rejects the angular
                // sidelobes of strong returns, which the range-only pass
                // cannot see (a scaled range profile passes it identically)
                if (NA > 1 && !gate(r, a, e, 1)) continue;
                if (NE > 1 && !gate(r, a, e, 2)) continue;
                hit[(static_cast<size_t>(r) * NA + a) * NE + e] = 1;
            }

    // 26-connected clusters over detected voxels
    PointCloud cloud;
    cloud.source = PointCloud::Source::kExtracted;
    std::vector<char> seen(hit.size(), 0);
    const double lambda_scale_az = NA > 1 ? image.u_az[1] - image.u_az[0] : 0.0;
    const double lambda_scale_el = NE > 1 ? image.u_el[1] - image.u_el[0] : 0.0;
    for (size_t seed = 0; seed < hit.size(); ++seed) {
        if (!hit[seed] || seen[seed]) continue;
        double wsum = 0.0, rw = 0.0, aw = 0.0, ew = 0.0;
        std::deque<size_t> todo{seed};
        seen[seed] = 1;
        while (!todo.empty()) {
            const size_t cur = todo.front();
            todo.pop_front();
            const int r = static_cast<int>(cur / (static_cast<size_t>(NA) * NE));
            const int a = static_cast<int>(cur / NE % NA);
            const int e = static_cast<int>(cur % NE);
            const double p = image.power[cur].v;
            wsum += p;
            rw += p * r;
            aw += p * a;
            ew += p * e;
            for (int dr = -1; dr <= 1; ++dr)
                for (int da = -1; da <= 1; ++da)
                    for (int de = -1; de <= 1; ++de) {
                        const int r2 = r + dr, a2 = a + da, e2 = e + de;
                        if (r2 < 0 || r2 >= NR || a2 < 0 || a2 >= NA || e2 < 0 || e2 >= NE)
                            continue;
                        const size_t n = (static_cast<size_t>(r2) * NA + a2) * NE + e2;
                        if (hit[n] && !seen[n]) {
                            seen[n] = 1;
                            todo.push_back(n);
                        }
                    }
        }
        const double range = (rw / wsum) * image.range_bin_m;
        const double ux = NA > 1 ? image.u_az[0] + (aw / wsum) * lambda_scale_az : 0.0;
        const double uy = NE > 1 ? image.u_el[0] + (ew / wsum) * lambda_scale_el : 0.0;
        const double uu = ux * ux + uy * uy;
        if (uu > 1.0) continue; // outside the visible cone
        const double uz = std::sqrt(1.0 - uu);
        cloud.points.push_back({range * ux, range * uy, range * uz, wsum});
    }
    return cloud;
}

RigidT<double> register_init(const PointCloud& cloud, const TriangleMesh& mesh) {
    if (cloud.points.empty())
        throw ConfigError("register_init: empty point cloud, no initialization possible");
    if (mesh.vertices.empty())
        throw ContractViolation("register_init: template mesh has no vertices");

    double wsum = 0.0;
    Vec3 ccloud{};
    for (const CloudPoint& p : cloud.points) {
        const double w = p.intensity;
        if (!(w > 0.0) || !std::isfinite(p.x + p.y + p.z + w))
            throw ConfigError("register_init: cloud points need finite coords and intensity > 0");
        ccloud = ccloud + w * Vec3{p.x, p.y, p.z};
        wsum += w;
    }
    ccloud = (1.0 / wsum) * ccloud;

    Vec3 cmesh{};
    for (const Vec3& v : mesh.vertices) cmesh = cmesh + v;
    cmesh = (1.0 / static_cast<double>(mesh.vertices.size())) * cmesh;
    double rcloud = 0.0, rmesh = 0.0;
    for (const CloudPoint& p : cloud.points)
        rcloud = std::max(rcloud, length(Vec3{p.x, p.y, p.z} - ccloud));
    for (const Vec3& v : mesh.vertices) rmesh = std::max(rmesh, length(v - cmesh));

    RigidT<double> pose;
    pose.translation = ccloud - cmesh;
    pose.scale = rmesh > 0.0 ? std::clamp(rcloud / rmesh, 0.5, 2.0) : 1.0;
    return pose;
}

namespace {

void append_f32_le(std::vector<unsigned char>& buf, double v) {
    const uint32_t u = std::bit_cast<uint32_t>(static_cast<float>(v));
    for (int s = 0; s < 32; s += 8) buf.push_back(static_cast<unsigned char>((u >> s) & 0xff));
}

} // namespace

void write_volume(const std::string& path, const SpatialImage& image) {
    std::vector<unsigned char> buf;
    buf.reserve(image.power.size() * 4);
    for (const DiffScalar& p : image.power) append_f32_le(buf, p.v);
    std::ofstream bin(path, std::ios::binary | std::ios::trunc);
    if (!bin) throw ConfigError("write_volume: cannot open '" + path + "' for writing");
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!bin) throw ConfigError("write_volume: short write to '" + path + "'");
    bin.close();

    nlohmann::json j;
    j["format"] = "vol-float32-le";
    j["shape"] = {image.n_range, image.n_az, image.n_el};
    j["order"] = "range-major, elevation fastest";
    j["range_bin_m"] = image.range_bin_m;
    j["u_az"] = image.u_az;
    j["u_el"] = image.u_el;
    const std::string side = std::filesystem::path(path).replace_extension(".json").string();
    std::ofstream js(side, std::ios::trunc);
    if (!js) throw ConfigError("write_volume: cannot open '" + side + "' for writing");
    js << j.dump(2) << '\n';
}

void write_pointcloud_csv(const std::string& path, const PointCloud& cloud) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw ConfigError("write_pointcloud_csv: cannot open '" + path + "'");
    os << "x,y,z,intensity\n";
    os.precision(17);
    for (const CloudPoint& p : cloud.points)
        os << p.x << ',' << p.y << ',' << p.z << ',' << p.intensity << '\n';
    if (!os) throw ConfigError("write_pointcloud_csv: short write to '" + path + "'");
}

PointCloud read_pointcloud_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("read_pointcloud_csv: cannot open '" + path + "'");
    PointCloud cloud;
    cloud.source = PointCloud::Source::kMeasured;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (lineno == 1 && line.find("x") != std::string::npos &&
            line.find("intensity") != std::string::npos)
            continue; // header
        std::istringstream row(line);
        CloudPoint p;
        char c1, c2, c3;
        if (!(row >> p.x >> c1 >> p.y >> c2 >> p.z >> c3 >> p.intensity) || c1 != ',' ||
            c2 != ',' || c3 != ',')
            throw ConfigError("read_pointcloud_csv: '" + path + "' line " +
                              std::to_string(lineno) + " is not x,y,z,intensity");
        if (!std::isfinite(p.x + p.y + p.z + p.intensity) || !(p.intensity > 0.0))
            throw ConfigError("read_pointcloud_csv: '" + path + "' line " +
                              std::to_string(lineno) +
                              " needs finite coords and intensity > 0");
        cloud.points.push_back(p);
    }
    return cloud;
}

} // namespace rfd
