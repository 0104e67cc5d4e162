#pragma once

#include <map>
#include <string>

#include "rfd/adgraph.hpp"

// Electromagnetic surface model: complex permittivity and Fresnel reflection
// applied at every bounce. Materials are (eps_r, sigma) pairs; positivity is
// guaranteed upstream by the optimizer's softplus re-parameterization.

namespace rfd {

struct RFMaterial {
    DiffScalar eps_r{1.0}; // relative permittivity, >= 1
    DiffScalar sigma{0.0}; // conductivity, S/m, >= 0
    std::string name;
};

struct FresnelCoeffs {
    DiffComplex r_p; // parallel
    DiffComplex r_s; // perpendicular
};

// Reflection coefficients for a ray striking the material from vacuum.
// cos_incident = -dot(incident_dir, normal), must lie in (0, 1]; backfaces
// are the caller's job to cull. eta is the relative wave impedance
// 1/sqrt(eps_hat) with eps_hat = eps_r - j sigma/(omega eps_0), and the
// transmitted angle follows Snell with the complex index, principal branch
// (Im sqrt <= 0) so transmitted waves decay in lossy media. The coefficients
// follow the conventional per-polarization field orientations, under which
// the pair comes out with opposite signs at normal incidence
// (r_p = (eta-1)/(eta+1) = -r_s there). Differentiable in eps_r, sigma, and
// cos_incident.
FresnelCoeffs fresnel(const RFMaterial& mat, const DiffScalar& cos_incident,
                      double carrier_freq);

// Unpolarized scalar reflectivity multiplied into a path's amplitude. The
// two polarizations define their positive field directions oppositely, so a
// physically meaningful coherent average first negates r_s to express both
// in one orientation; a head-on mirror then reflects fully ((r_p - r_s)/2
// is -1 for a conductor at any angle) instead of cancelling itself.
inline DiffComplex effective_reflectivity(const FresnelCoeffs& c) {
    return DiffScalar{0.5} * (c.r_p - c.r_s);
}

// Built-in presets (plain values; wrap in parameters to optimize them).
// Dielectric values follow the ITU-R P.2040 building-material fits evaluated
// near 77 GHz; skin follows published tissue measurements in the same band.
const std::map<std::string, std::pair<double, double>>& material_library();

// Preset lookup; throws ConfigError for unknown names.
RFMaterial material_lookup(const std::string& name);

} // namespace rfd
