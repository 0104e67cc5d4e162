#include "rfd/ifsignal.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "rfd/constants.hpp"
#include "rfd/errors.hpp"
#include "rfd/rng.hpp"

namespace rfd {

namespace {

// Instantaneous angular factor 2*pi*(mu*t + f_c). Every synthesis path and
// the analytic partials derive phases from this one expression so their
// values agree bit for bit.
double phase_rate(const ChirpConfig& c, double t) {
    return 2.0 * kPi * (c.slope() * t + c.carrier_freq);
}

std::string path_tag(size_t i, const PathRecord& p) {
    std::ostringstream os;
    os << "path " << i << " (tx " << p.tx_id << ", rx " << p.rx_id << ")";
    return os.str();
}

void check_path(size_t i, const PathRecord& p, const ChirpConfig& chirp) {
    if (!std::isfinite(p.tof.v) || !std::isfinite(p.amplitude.re.v) ||
        !std::isfinite(p.amplitude.im.v) || !std::isfinite(p.weight.v))
        throw InternalFault("synthesize: " + path_tag(i, p) +
                            " carries a non-finite tof/amplitude/weight");
    if (!(p.tof.v > 0.0))
        throw ContractViolation("synthesize: " + path_tag(i, p) + " has non-positive tof");
    if (p.tof.v >= chirp.duration) {
        std::ostringstream os;
        os << "synthesize: " << path_tag(i, p) << " has tof " << p.tof.v
           << " s reaching past the chirp duration " << chirp.duration << " s";
        throw ConfigError(os.str());
    }
}

void fold_tape(Tape*& tape, Tape* t) {
    if (!t) return;
    if (tape && t != tape)
        throw ContractViolation("synthesize: paths live on different tapes");
    tape = t;
}

// Plain-double row for one element; also the forward pass of the fused node.
std::vector<DiffComplex> element_plain(const std::vector<PathRecord>& paths,
                                       const std::vector<int>& idx, const ChirpConfig& c) {
    std::vector<DiffComplex> row(c.n_samples, DiffComplex{0.0, 0.0});
    for (int k = 0; k < c.n_samples; ++k) {
        const double g = phase_rate(c, c.sample_time(k));
        double acc_re = 0.0;
        double acc_im = 0.0;
        for (int i : idx) {
            const PathRecord& p = paths[i];
            const double sre = p.weight.v * p.amplitude.re.v;
            const double sim = p.weight.v * p.amplitude.im.v;
            const double phi = g * p.tof.v;
            const double cc = std::cos(phi);
            const double ss = std::sin(phi);
            acc_re += sre * cc - sim * ss;
            acc_im += sre * ss + sim * cc;
        }
        row[k] = {acc_re, acc_im};
    }
    return row;
}

// Same formula built from tape primitives; the correctness oracle.
std::vector<DiffComplex> element_generic(const std::vector<PathRecord>& paths,
                                         const std::vector<int>& idx, const ChirpConfig& c) {
    std::vector<DiffComplex> row(c.n_samples, DiffComplex{0.0, 0.0});
    for (int k = 0; k < c.n_samples; ++k) {
        const double g = phase_rate(c, c.sample_time(k));
        DiffComplex acc{0.0, 0.0};
        for (int i : idx) {
            const PathRecord& p = paths[i];
            const DiffComplex s{p.weight * p.amplitude.re, p.weight * p.amplitude.im};
            acc = acc + s * expj(DiffScalar{g} * p.tof);
        }
        row[k] = acc;
    }
    return row;
}

// One fused tape node per output sample component. Inputs are each path's
// tof node and signal-strength component nodes; backward applies
//   d re/d sre =  cos phi   d re/d sim = -sin phi
//   d im/d sre =  sin phi   d im/d sim =  cos phi
//   d re/d tau = -g (sre sin phi + sim cos phi)
//   d im/d tau =  g (sre cos phi - sim sin phi)
// with g = 2*pi*(mu*t + f_c) and phi = g*tau, recomputing the trig terms
// instead of storing per-sample-per-path state.
class ChirpSumOp final : public CustomOp {
public:
    struct Inputs {
        std::vector<int32_t> tof_node, sre_node, sim_node;
        std::vector<double> tof, sre, sim;
    };

    ChirpSumOp(Inputs in, ChirpConfig chirp) : in_(std::move(in)), chirp_(chirp) {}

    void set_first_output(int32_t node) { first_ = node; }

    void backward(Tape& tape, int32_t node, double adjoint) override {
        const int32_t idx = node - first_;
        const int k = idx >> 1;
        const bool imag_part = (idx & 1) != 0;
        const double g = phase_rate(chirp_, chirp_.sample_time(k));
        for (size_t i = 0; i < in_.tof.size(); ++i) {
            const double phi = g * in_.tof[i];
            const double cc = std::cos(phi);
            const double ss = std::sin(phi);
            double d_sre, d_sim, d_tof;
            if (imag_part) {
                d_sre = ss;
                d_sim = cc;
                d_tof = g * (in_.sre[i] * cc - in_.sim[i] * ss);
            } else {
                d_sre = cc;
                d_sim = -ss;
                d_tof = -g * (in_.sre[i] * ss + in_.sim[i] * cc);
            }
            if (in_.sre_node[i] >= 0) tape.add_adjoint(in_.sre_node[i], adjoint * d_sre);
            if (in_.sim_node[i] >= 0) tape.add_adjoint(in_.sim_node[i], adjoint * d_sim);
            if (in_.tof_node[i] >= 0) tape.add_adjoint(in_.tof_node[i], adjoint * d_tof);
        }
    }

private:
    Inputs in_;
    ChirpConfig chirp_;
    int32_t first_ = -1;
};

std::vector<DiffComplex> element_fused(const std::vector<PathRecord>& paths,
                                       const std::vector<int>& idx, const ChirpConfig& c,
                                       Tape* tape) {
    ChirpSumOp::Inputs in;
    in.tof_node.reserve(idx.size());
    for (int i : idx) {
        const PathRecord& p = paths[i];
        // The products push their own tape nodes, so weight and amplitude
        // gradients ride ordinary arithmetic; the fused node only ever sees
        // the combined signal strength.
        const DiffScalar sre = p.weight * p.amplitude.re;
        const DiffScalar sim = p.weight * p.amplitude.im;
        in.tof_node.push_back(p.tof.node);
        in.sre_node.push_back(sre.node);
        in.sim_node.push_back(sim.node);
        in.tof.push_back(p.tof.v);
        in.sre.push_back(sre.v);
        in.sim.push_back(sim.v);
    }
    std::vector<DiffComplex> row = element_plain(paths, idx, c);
    auto op = std::make_shared<ChirpSumOp>(std::move(in), c);
    for (int k = 0; k < c.n_samples; ++k) {
        const int32_t re_id = tape->push_custom(row[k].re.v, op);
        const int32_t im_id = tape->push_custom(row[k].im.v, op);
        if (k == 0) op->set_first_output(re_id);
        row[k] = {DiffScalar{row[k].re.v, re_id, tape}, DiffScalar{row[k].im.v, im_id, tape}};
    }
    return row;
}

} // namespace

IFFrame synthesize(const std::vector<PathRecord>& paths, const ChirpConfig& chirp, int n_tx,
                   int n_rx, SynthesisMode mode) {
    validate_chirp(chirp);
    if (n_tx < 1 || n_rx < 1)
        throw ContractViolation("synthesize: element counts must be >= 1");

    const int n_elem = n_tx * n_rx;
    std::vector<std::vector<int>> by_elem(n_elem);
    Tape* tape = nullptr;
    for (size_t i = 0; i < paths.size(); ++i) {
        const PathRecord& p = paths[i];
        if (p.tx_id < 0 || p.tx_id >= n_tx || p.rx_id < 0 || p.rx_id >= n_rx)
            throw ContractViolation("synthesize: " + path_tag(i, p) + " ids out of range");
        check_path(i, p, chirp);
        fold_tape(tape, p.tof.tape);
        fold_tape(tape, p.amplitude.re.tape);
        fold_tape(tape, p.amplitude.im.tape);
        fold_tape(tape, p.weight.tape);
        by_elem[p.tx_id * n_rx + p.rx_id].push_back(static_cast<int>(i));
    }

    IFFrame out;
    out.chirp = chirp;
    out.n_tx = n_tx;
    out.n_rx = n_rx;
    out.samples.resize(n_elem);

    if (!tape) {
        // No gradients requested anywhere: rows are independent plain math.
#pragma omp parallel for schedule(static)
        for (int e = 0; e < n_elem; ++e) out.samples[e] = element_plain(paths, by_elem[e], chirp);
        return out;
    }

    for (int e = 0; e < n_elem; ++e) {
        if (by_elem[e].empty())
            out.samples[e] = element_plain(paths, by_elem[e], chirp);
        else if (mode == SynthesisMode::kFused)
            out.samples[e] = element_fused(paths, by_elem[e], chirp, tape);
        else
            out.samples[e] = element_generic(paths, by_elem[e], chirp);
    }
    return out;
}

std::vector<PathPartials> analytic_partials(const std::vector<PathRecord>& paths,
                                            const ChirpConfig& chirp, double t) {
    validate_chirp(chirp);
    if (!std::isfinite(t) || t < 0.0 || t >= chirp.duration)
        throw ContractViolation("analytic_partials: sample time outside [0, duration)");
    const double g = phase_rate(chirp, t);
    std::vector<PathPartials> out;
    out.reserve(paths.size());
    for (size_t i = 0; i < paths.size(); ++i) {
        const PathRecord& p = paths[i];
        check_path(i, p, chirp);
        const double phi = g * p.tof.v;
        const std::complex<double> e{std::cos(phi), std::sin(phi)};
        const std::complex<double> s{p.weight.v * p.amplitude.re.v,
                                     p.weight.v * p.amplitude.im.v};
        out.push_back({std::complex<double>{0.0, g} * s * e, e});
    }
    return out;
}

IFFrame add_noise(const IFFrame& frame, double snr_db, uint64_t seed) {
    if (std::isnan(snr_db)) throw ContractViolation("add_noise: snr_db is NaN");
    if (std::isinf(snr_db)) {
        if (snr_db > 0.0) return frame;
        throw ContractViolation("add_noise: snr_db must be finite or +inf");
    }

    double power = 0.0;
    size_t count = 0;
    for (const auto& row : frame.samples)
        for (const DiffComplex& z : row) {
            power += z.re.v * z.re.v + z.im.v * z.im.v;
            ++count;
        }
    if (count == 0) return frame;
    power /= static_cast<double>(count);

    // Circular complex Gaussian: per-quadrature variance is half the total
    // noise power. An all-zero frame has nothing to scale against and stays
    // all-zero.
    const double sigma = std::sqrt(0.5 * power * std::pow(10.0, -snr_db / 10.0));
    constexpr uint64_t kNoiseStream = 0x49514e4f49534531ull;

    IFFrame out = frame;
    for (size_t e = 0; e < out.samples.size(); ++e)
        for (size_t k = 0; k < out.samples[e].size(); ++k) {
            DiffComplex& z = out.samples[e][k];
            z.re += DiffScalar{sigma * rng_gaussian(seed, kNoiseStream, e, k, 0)};
            z.im += DiffScalar{sigma * rng_gaussian(seed, kNoiseStream, e, k, 1)};
        }
    return out;
}

namespace {

void append_f32_le(std::vector<unsigned char>& buf, double v) {
    const uint32_t u = std::bit_cast<uint32_t>(static_cast<float>(v));
    buf.push_back(static_cast<unsigned char>(u & 0xff));
    buf.push_back(static_cast<unsigned char>((u >> 8) & 0xff));
    buf.push_back(static_cast<unsigned char>((u >> 16) & 0xff));
    buf.push_back(static_cast<unsigned char>((u >> 24) & 0xff));
}

float read_f32_le(const unsigned char* p) {
    const uint32_t u = static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
                       (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

std::string sidecar_path(const std::string& path) {
    return std::filesystem::path(path).replace_extension(".json").string();
}

} // namespace

void write_iq(const std::string& path, const IFFrame& frame) {
    validate_chirp(frame.chirp);
    if (static_cast<int>(frame.samples.size()) != frame.n_virtual())
        throw ContractViolation("write_iq: row count does not match n_tx * n_rx");
    for (const auto& row : frame.samples)
        if (static_cast<int>(row.size()) != frame.chirp.n_samples)
            throw ContractViolation("write_iq: row length does not match chirp n_samples");

    std::vector<unsigned char> buf;
    buf.reserve(static_cast<size_t>(frame.n_virtual()) * frame.chirp.n_samples * 8);
    for (const auto& row : frame.samples)
        for (const DiffComplex& z : row) {
            append_f32_le(buf, z.re.v);
            append_f32_le(buf, z.im.v);
        }

    std::ofstream bin(path, std::ios::binary | std::ios::trunc);
    if (!bin) throw ConfigError("write_iq: cannot open '" + path + "' for writing");
    bin.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!bin) throw ConfigError("write_iq: short write to '" + path + "'");
    bin.close();

    nlohmann::json j;
    j["format"] = "iq-float32-le";
    j["element_order"] = "tx-major";
    j["shape"] = {frame.n_virtual(), frame.chirp.n_samples};
    j["n_tx"] = frame.n_tx;
    j["n_rx"] = frame.n_rx;
    j["chirp"] = {{"carrier_freq", frame.chirp.carrier_freq},
                  {"bandwidth", frame.chirp.bandwidth},
                  {"duration", frame.chirp.duration},
                  {"sample_rate", frame.chirp.sample_rate},
                  {"n_samples", frame.chirp.n_samples}};
    const std::string side = sidecar_path(path);
    std::ofstream js(side, std::ios::trunc);
    if (!js) throw ConfigError("write_iq: cannot open '" + side + "' for writing");
    js << j.dump(2) << '\n';
}

IFFrame read_iq(const std::string& path) {
    const std::string side = sidecar_path(path);
    std::ifstream js(side);
    if (!js) throw ConfigError("read_iq: cannot open sidecar '" + side + "'");

    IFFrame frame;
    try {
        const nlohmann::json j = nlohmann::json::parse(js);
        if (j.at("format").get<std::string>() != "iq-float32-le")
            throw ConfigError("read_iq: '" + side + "' has unsupported format '" +
                              j.at("format").get<std::string>() + "'");
        if (j.at("element_order").get<std::string>() != "tx-major")
            throw ConfigError("read_iq: '" + side + "' has unsupported element order");
        frame.n_tx = j.at("n_tx").get<int>();
        frame.n_rx = j.at("n_rx").get<int>();
        const nlohmann::json& c = j.at("chirp");
        frame.chirp.carrier_freq = c.at("carrier_freq").get<double>();
        frame.chirp.bandwidth = c.at("bandwidth").get<double>();
        frame.chirp.duration = c.at("duration").get<double>();
        frame.chirp.sample_rate = c.at("sample_rate").get<double>();
        frame.chirp.n_samples = c.at("n_samples").get<int>();
        const auto shape = j.at("shape").get<std::vector<int64_t>>();
        if (shape.size() != 2 || shape[0] != frame.n_tx * frame.n_rx ||
            shape[1] != frame.chirp.n_samples)
            throw ConfigError("read_iq: '" + side + "' shape disagrees with n_tx/n_rx/chirp");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("read_iq: malformed sidecar '" + side + "': " + e.what());
    }
    if (frame.n_tx < 1 || frame.n_rx < 1)
        throw ConfigError("read_iq: '" + side + "' has non-positive element counts");
    validate_chirp(frame.chirp);

    std::ifstream bin(path, std::ios::binary);
    if (!bin) throw ConfigError("read_iq: cannot open '" + path + "'");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(bin)),
                                   std::istreambuf_iterator<char>());
    const size_t expect =
        static_cast<size_t>(frame.n_virtual()) * static_cast<size_t>(frame.chirp.n_samples) * 8;
    if (buf.size() != expect) {
        std::ostringstream os;
        os << "read_iq: '" << path << "' holds " << buf.size() << " bytes, sidecar implies "
           << expect;
        throw ConfigError(os.str());
    }

    frame.samples.assign(frame.n_virtual(), {});
    const unsigned char* p = buf.data();
    for (auto& row : frame.samples) {
        row.resize(frame.chirp.n_samples, DiffComplex{0.0, 0.0});
        for (DiffComplex& z : row) {
            z = DiffComplex{static_cast<double>(read_f32_le(p)),
                            static_cast<double>(read_f32_le(p + 4))};
            p += 8;
        }
    }
    return frame;
}

} // namespace rfd
