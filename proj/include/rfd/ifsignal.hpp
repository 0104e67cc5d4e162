#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "rfd/chirp.hpp"
#include "rfd/pathrecord.hpp"

// Complex baseband IF synthesis. Dechirping a path with time of flight tau
// leaves a tone at the beat frequency mu*tau with carrier phase 2*pi*f_c*tau,
// so the frame at sample time t_k = k/f_s is
//
//   S_e(t_k) = sum_i  s_i * exp(2*pi*j*(mu*t_k + f_c)*tau_i),
//   s_i = weight_i * amplitude_i,
//
// summed over the paths of virtual element e. Positive-frequency convention
// throughout; I/Q output only.

namespace rfd {

// kFused registers one hand-differentiated tape node per output sample
// (the per-path partials below are applied in its backward pass, so the
// exponentials are recomputed once per sample instead of being unwound
// element-wise). kGeneric composes the same formula from scalar tape
// primitives and exists as the correctness oracle for kFused.
enum class SynthesisMode { kFused, kGeneric };

struct IFFrame {
    ChirpConfig chirp;
    int n_tx = 1;
    int n_rx = 1;
    // [n_tx * n_rx][n_samples], tx-major: row index tx_id * n_rx + rx_id.
    std::vector<std::vector<DiffComplex>> samples;

    int n_virtual() const { return n_tx * n_rx; }
};

// Builds the IF frame for every virtual element. Each sample is
// differentiable in every path's tof, amplitude, and weight.
//   ConfigError:       a path's tof reaches past the chirp duration (names
//                      the offending path), or the chirp itself is invalid
//   ContractViolation: ids out of range, non-positive tof, mixed tapes
//   InternalFault:     non-finite tof/amplitude/weight
// Paths with no tape attached take a plain evaluation fast path (parallel
// across elements); its values match the taped modes bit for bit.
IFFrame synthesize(const std::vector<PathRecord>& paths, const ChirpConfig& chirp, int n_tx,
                   int n_rx, SynthesisMode mode = SynthesisMode::kFused);

// Closed-form per-path derivatives of one sample S(t), evaluated at plain
// values. With e_i = exp(2*pi*j*(mu*t + f_c)*tau_i):
//   d_tof    = dS/dtau_i = 2*pi*j*(mu*t + f_c) * s_i * e_i
//   d_signal = dS/ds_i   = e_i
// These are exactly the rules the fused synthesis node applies on the tape.
struct PathPartials {
    std::complex<double> d_tof;
    std::complex<double> d_signal;
};

std::vector<PathPartials> analytic_partials(const std::vector<PathRecord>& paths,
                                            const ChirpConfig& chirp, double t);

// Adds i.i.d. circular complex Gaussian noise at `snr_db` relative to the
// frame's mean sample power. The noise enters as plain constants (it is
// data, not a differentiable quantity), so gradients of the samples are
// unchanged. snr_db = +infinity returns the frame untouched; NaN or -infinity
// is a ContractViolation. Fixed (seed, element, sample) keys make the noise
// bit-identical across runs and thread counts.
IFFrame add_noise(const IFFrame& frame, double snr_db, uint64_t seed);

// Frame I/O: `path` gets little-endian float32 interleaved (re, im) pairs,
// element-major then sample-major; a JSON sidecar next to it (extension
// replaced by .json) carries the chirp, element order, and shape. The same
// pair of files is the observation ingest format. Failures throw ConfigError.
void write_iq(const std::string& path, const IFFrame& frame);
IFFrame read_iq(const std::string& path);

} // namespace rfd
