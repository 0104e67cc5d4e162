#include "rfd/rfmaterial.hpp"

#include "rfd/constants.hpp"

namespace rfd {

FresnelCoeffs fresnel(const RFMaterial& mat, const DiffScalar& cos_incident,
                      double carrier_freq) {
    if (!(cos_incident.v > 0.0) || cos_incident.v > 1.0 + 1e-12)
        throw ContractViolation("fresnel: cos_incident must lie in (0, 1], got " +
                                std::to_string(cos_incident.v));
    if (carrier_freq <= 0.0)
        throw ContractViolation("fresnel: carrier frequency must be positive");

    const double omega = 2.0 * kPi * carrier_freq;
    const DiffComplex eps_hat{mat.eps_r, -mat.sigma * DiffScalar{1.0 / (omega * kEps0)}};
    const DiffComplex eta = DiffComplex{1.0} / sqrt(eps_hat);

    const DiffScalar ci = cos_incident;
    const DiffScalar si2 = max_zero(DiffScalar{1.0} - ci * ci);
    // Snell with the complex index: sin^2(t) = sin^2(i) / eps_hat
    const DiffComplex st2 = DiffComplex{si2, DiffScalar{0.0}} / eps_hat;
    const DiffComplex ct = sqrt(DiffComplex{DiffScalar{1.0} - st2.re, -st2.im});

    const DiffComplex eci = ci * eta;
    const DiffComplex ect = eta * ct;
    const DiffComplex cic{ci, DiffScalar{0.0}};
    FresnelCoeffs out;
    // Impedance forms with vacuum on the incident side. The two
    // polarizations are written in their conventional field orientations,
    // which point opposite ways head-on: at normal incidence
    // r_p = (eta-1)/(eta+1) and r_s = -r_p. effective_reflectivity() folds
    // that orientation difference back out.
    out.r_p = (eci - ct) / (eci + ct);
    out.r_s = (cic - ect) / (cic + ect);
    return out;
}

const std::map<std::string, std::pair<double, double>>& material_library() {
    static const std::map<std::string, std::pair<double, double>> lib{
        {"metal", {1.0, 1.0e7}},      {"concrete", {5.24, 1.4}}, {"wood", {1.99, 0.5}},
        {"skin", {7.0, 36.0}},        {"glass", {6.27, 0.77}},   {"vacuumlike", {1.0, 0.0}},
    };
    return lib;
}

RFMaterial material_lookup(const std::string& name) {
    const auto& lib = material_library();
    const auto it = lib.find(name);
    if (it == lib.end()) {
        std::string known;
        for (const auto& [k, v] : lib) {
            (void)v;
            known += known.empty() ? k : ", " + k;
        }
        throw ConfigError("unknown material '" + name + "' (known: " + known + ")");
    }
    RFMaterial m;
    m.eps_r = DiffScalar{it->second.first};
    m.sigma = DiffScalar{it->second.second};
    m.name = it->first;
    return m;
}

} // namespace rfd
