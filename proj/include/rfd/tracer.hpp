#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "rfd/antenna.hpp"
#include "rfd/geometry.hpp"
#include "rfd/pathrecord.hpp"
#include "rfd/rfmaterial.hpp"

// Specular path tracer for the radar forward model. Path topology (which
// triangles a ray chain visits) is discovered with plain arithmetic on a
// BVH; every surviving chain is then replayed through the differentiable
// intersection so time of flight, amplitude, and Monte Carlo weight carry
// gradients to scene pose, displacement, and material parameters. Discovery
// runs in parallel; replay is serial whenever a tape is attached because
// tape node order is part of the deterministic contract.

namespace rfd {

struct SceneObject {
    TriangleMesh mesh;
    Rigid pose;
    std::vector<DVec3> displacement; // optional, per vertex
    RFMaterial material;
    std::string name;
};

struct Scene {
    std::vector<SceneObject> objects;
};

// ConfigError on non-finite poses, displacement length mismatches, or
// out-of-domain materials. An empty object list is legal.
void validate_scene(const Scene& scene);

struct TraceConfig {
    int rays_per_virtual_element = 64; // stratified rays per TX element
    int max_bounces = 2;
    uint64_t rng_seed = 1;
    double carrier_freq = 77e9; // Hz, sets the Fresnel dispersion at each bounce
    double edge_smoothing_kappa = 1e4;       // visibility cone concentration
    double russian_roulette_threshold = 1e-8; // amplitude floor for continuations
    // Sampling cone for the stratified rays, world frame. A zero axis (the
    // default) aims at the scene's bounding sphere with 20% angular slack.
    // The cone is a constant of the estimator: gradients never flow through
    // it, so freeze it explicitly whenever forward evaluations at perturbed
    // parameters must integrate over the identical ray set (finite
    // differences, line searches).
    Vec3 beam_axis{};
    double beam_half_angle = 0.0; // radians; 0 derives from scene bounds
    // Keep hard 0/1 visibility in forward values and use the smoothed
    // estimate only for gradients. Turning this off makes the forward value
    // itself smooth near silhouettes.
    bool hard_forward = true;
    int visibility_probes = 8;
};

// ConfigError on out-of-range fields.
void validate_trace_config(const TraceConfig& cfg);

// World-space acceleration state for one scene configuration: plain
// transformed vertices, a BVH over them, per-object differentiable
// transform caches, and the resolved sampling cone. Built internally by
// trace(); exposed so the visibility operator can be driven directly.
class TraceContext {
public:
    TraceContext(const Scene& scene, const AntennaArray& array, const TraceConfig& cfg);
    ~TraceContext();
    TraceContext(const TraceContext&) = delete;
    TraceContext& operator=(const TraceContext&) = delete;

    int triangle_count() const;
    double cap_solid_angle() const;

    struct Impl;
    Impl& impl() { return *impl_; }

private:
    std::unique_ptr<Impl> impl_;
};

// Smoothed visibility of the segment from -> to against the scene in `ctx`,
// in [0, 1]. Away from silhouettes this is the plain 0/1 occlusion test as
// a constant (zero gradient). When the smoothing cone straddles a
// silhouette edge, the value follows a logistic ramp in the signed angular
// distance between the segment direction and the edge, so gradients flow to
// the occluder's pose; with hard_forward the forward value stays exactly
// 0 or 1 and only the gradient is smoothed. `probe_key` decorrelates the
// auxiliary probe directions between call sites.
DiffScalar reparameterized_visibility(TraceContext& ctx, const DVec3& from, const DVec3& to,
                                      uint64_t probe_key);

// Traces every TX element of the array against the scene and returns the
// completed paths, ordered by (tx, ray slot, bounce depth, rx). Per TX:
// one deterministic ray toward each triangle centroid carrying that
// triangle's subtended solid angle as weight, plus rays_per_virtual_element
// stratified rays in the sampling cone carrying cap_solid_angle / N, with
// a control-variate correction on the centroid weight so the weighted sum
// stays an unbiased estimate of the scattering integral. At each hit a
// return segment to every RX is tested for (smoothed) visibility; specular
// continuations extend the chain up to max_bounces, with russian roulette
// below the amplitude floor keeping deep bounces unbiased.
//   amplitude = F(launch) * G(arrival) / (4 pi * total length)
//               * prod reflectivity * prod cos(incidence)
//   tof       = total length / c
// Identical (scene, array, cfg) inputs produce bit-identical records at any
// thread count. Empty scenes trace to an empty vector. InternalFault on a
// non-finite amplitude.
std::vector<PathRecord> trace(const Scene& scene, const AntennaArray& array,
                              const TraceConfig& cfg);

// Measure-weighted incoherent power sum_i weight_i * |amplitude_i|^2: the
// estimator whose expectation is the radar-equation received power, used by
// the convergence and falloff diagnostics.
DiffScalar received_power(const std::vector<PathRecord>& paths);

struct ConvergenceRow {
    int n_rays = 0;
    double mean_power = 0.0;
    double variance = 0.0;
};

// Empirical mean/variance of received_power across 16 seeds for each entry
// of n_list, with the sampling cone frozen once so every row integrates the
// same domain. Plain evaluation only.
std::vector<ConvergenceRow> estimate_convergence(const Scene& scene, const AntennaArray& array,
                                                 const TraceConfig& cfg,
                                                 const std::vector<int>& n_list);

} // namespace rfd
