#include "rfd/tracer.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "rfd/constants.hpp"
#include "rfd/errors.hpp"
#include "rfd/rng.hpp"

namespace rfd {

namespace {

constexpr uint64_t kStratStream = 0x73747261ull;
constexpr uint64_t kRouletteStream = 0x726c7474ull;
constexpr uint64_t kProbeStream = 0x70726f62ull;

bool finite3(const Vec3& v) {
    return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

// Orthonormal basis completing unit vector a (branch is stable: the pivot
// axis only changes when a.x crosses 0.9, never under small perturbations
// of nearly-boresight cones).
void frame_of(const Vec3& a, Vec3& e1, Vec3& e2) {
    const Vec3 up = std::abs(a.x) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
    e1 = normalized(cross(up, a));
    e2 = cross(a, e1);
}

struct ChainEntry {
    int32_t gtri = -1;
    double rr_scale = 1.0; // cumulative roulette compensation at this depth
};

} // namespace

// World-space state shared by discovery, replay, and the visibility
// operator. Plain vertices/normals are the val() of the differentiable
// transform caches, so discovery topology and replayed values can never
// disagree about where a surface sits.
struct TraceContext::Impl {
    const Scene* scene = nullptr;
    const AntennaArray* array = nullptr;
    TraceConfig cfg;

    std::vector<std::unique_ptr<TransformCache>> caches;
    std::vector<RFMaterial> plain_mats;

    // flattened plain soup
    std::vector<Vec3> verts;
    std::vector<Vec3> vnormals;
    std::vector<std::array<int32_t, 3>> tris;
    std::vector<int32_t> tri_obj, tri_local;
    std::vector<int32_t> vert_base; // per object offset into verts
    Bvh bvh;

    bool geom_taped = false; // pose/displacement on a tape
    bool any_taped = false;  // geometry or material on a tape

    Vec3 beam_axis{0.0, 0.0, 1.0};
    Vec3 beam_e1{}, beam_e2{};
    double beam_half = 0.0;
    double cap_omega = 0.0;

    Vec3 boresight{};

    int n_tri() const { return static_cast<int>(tris.size()); }

    Vec3 plain_centroid(int32_t g) const {
        const auto& t = tris[g];
        const Vec3 a = verts[t[0]], b = verts[t[1]], c = verts[t[2]];
        return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0, (a.z + b.z + c.z) / 3.0};
    }

    Vec3 face_cross_plain(int32_t g) const {
        const auto& t = tris[g];
        return cross(verts[t[1]] - verts[t[0]], verts[t[2]] - verts[t[0]]);
    }

    // Mirrors the interpolation in intersect_triangle on plain values.
    Vec3 interp_normal(int32_t g, double u, double v) const {
        u = u < 0.0 ? 0.0 : (u > 1.0 ? 1.0 : u);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        const double w = 1.0 - u - v;
        const auto& t = tris[g];
        const Vec3 n0 = vnormals[t[0]], n1 = vnormals[t[1]], n2 = vnormals[t[2]];
        const Vec3 ni{w * n0.x + u * n1.x + v * n2.x, w * n0.y + u * n1.y + v * n2.y,
                      w * n0.z + u * n1.z + v * n2.z};
        return normalized(ni);
    }

    Vec3 cap_sample(int tx, int i) const {
        const double u1 = rng_uniform(cfg.rng_seed, kStratStream, static_cast<uint64_t>(tx),
                                      static_cast<uint64_t>(i), 0);
        const double u2 = rng_uniform(cfg.rng_seed, kStratStream, static_cast<uint64_t>(tx),
                                      static_cast<uint64_t>(i), 1);
        const double w = 1.0 - u1 * (1.0 - std::cos(beam_half));
        const double s = std::sqrt(std::max(0.0, 1.0 - w * w));
        const double phi = 2.0 * kPi * u2;
        const double c = std::cos(phi), sn = std::sin(phi);
        return {w * beam_axis.x + s * (c * beam_e1.x + sn * beam_e2.x),
                w * beam_axis.y + s * (c * beam_e1.y + sn * beam_e2.y),
                w * beam_axis.z + s * (c * beam_e1.z + sn * beam_e2.z)};
    }
};

void validate_scene(const Scene& scene) {
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& o = scene.objects[i];
        const std::string who = "scene object " + std::to_string(i) +
                                (o.name.empty() ? "" : " ('" + o.name + "')");
        const auto& rp = o.pose;
        const double pv[7] = {rp.translation.x.v, rp.translation.y.v, rp.translation.z.v,
                              rp.rotation.x.v,    rp.rotation.y.v,    rp.rotation.z.v,
                              rp.scale.v};
        for (double x : pv)
            if (!std::isfinite(x)) throw ConfigError(who + ": non-finite pose");
        if (!(rp.scale.v > 0.0)) throw ConfigError(who + ": scale must be positive");
        if (!o.displacement.empty() && o.displacement.size() != o.mesh.vertices.size())
            throw ConfigError(who + ": displacement has " + std::to_string(o.displacement.size()) +
                              " entries for " + std::to_string(o.mesh.vertices.size()) +
                              " vertices");
        for (const auto& d : o.displacement)
            if (!std::isfinite(d.x.v) || !std::isfinite(d.y.v) || !std::isfinite(d.z.v))
                throw ConfigError(who + ": non-finite displacement");
        if (!std::isfinite(o.material.eps_r.v) || o.material.eps_r.v < 1.0)
            throw ConfigError(who + ": eps_r must be finite and >= 1");
        if (!std::isfinite(o.material.sigma.v) || o.material.sigma.v < 0.0)
            throw ConfigError(who + ": sigma must be finite and >= 0");
    }
}

void validate_trace_config(const TraceConfig& cfg) {
    auto bad = [](const std::string& what, double got) {
        throw ConfigError("trace config: " + what + " (got " + std::to_string(got) + ")");
    };
    if (cfg.rays_per_virtual_element < 1)
        bad("rays_per_virtual_element must be >= 1", cfg.rays_per_virtual_element);
    if (cfg.max_bounces < 1) bad("max_bounces must be >= 1", cfg.max_bounces);
    if (!(cfg.carrier_freq > 0.0) || !std::isfinite(cfg.carrier_freq))
        bad("carrier_freq must be positive", cfg.carrier_freq);
    if (!(cfg.edge_smoothing_kappa > 0.0) || !std::isfinite(cfg.edge_smoothing_kappa))
        bad("edge_smoothing_kappa must be positive", cfg.edge_smoothing_kappa);
    if (!(cfg.russian_roulette_threshold > 0.0) || !std::isfinite(cfg.russian_roulette_threshold))
        bad("russian_roulette_threshold must be positive", cfg.russian_roulette_threshold);
    if (!std::isfinite(cfg.beam_half_angle) || cfg.beam_half_angle < 0.0 ||
        cfg.beam_half_angle > kPi)
        bad("beam_half_angle must lie in [0, pi]", cfg.beam_half_angle);
    if (cfg.visibility_probes < 1) bad("visibility_probes must be >= 1", cfg.visibility_probes);
}

TraceContext::TraceContext(const Scene& scene, const AntennaArray& array, const TraceConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    validate_trace_config(cfg);
    validate_array(array);
    validate_scene(scene);

    Impl& S = *impl_;
    S.scene = &scene;
    S.array = &array;
    S.cfg = cfg;
    S.boresight = boresight_world(array);

    auto taped = [](const DiffScalar& x) { return x.node >= 0; };
    for (const auto& o : scene.objects) {
        const auto& rp = o.pose;
        bool g = taped(rp.translation.x) || taped(rp.translation.y) || taped(rp.translation.z) ||
                 taped(rp.rotation.x) || taped(rp.rotation.y) || taped(rp.rotation.z) ||
                 taped(rp.scale);
        for (const auto& d : o.displacement) g = g || taped(d.x) || taped(d.y) || taped(d.z);
        S.geom_taped = S.geom_taped || g;
        S.any_taped = S.any_taped || g || taped(o.material.eps_r) || taped(o.material.sigma);
    }

    // Warm every transform cache serially: replay and the plain mirrors both
    // read the same values afterwards, and in taped mode the node order on
    // the tape is fixed here once instead of by access pattern.
    for (size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& o = scene.objects[i];
        S.caches.push_back(std::make_unique<TransformCache>(
            o.mesh, o.pose, o.displacement.empty() ? nullptr : &o.displacement));
        RFMaterial pm;
        pm.eps_r = DiffScalar{o.material.eps_r.v};
        pm.sigma = DiffScalar{o.material.sigma.v};
        pm.name = o.material.name;
        S.plain_mats.push_back(pm);

        auto& cache = *S.caches.back();
        const int32_t base = static_cast<int32_t>(S.verts.size());
        S.vert_base.push_back(base);
        for (int32_t v = 0; v < static_cast<int32_t>(o.mesh.vertices.size()); ++v) {
            S.verts.push_back(to_plain(cache.vertex(v)));
            S.vnormals.push_back(to_plain(cache.vertex_normal(v)));
        }
        for (int32_t t = 0; t < static_cast<int32_t>(o.mesh.triangles.size()); ++t) {
            const auto& tr = o.mesh.triangles[t];
            S.tris.push_back({tr[0] + base, tr[1] + base, tr[2] + base});
            S.tri_obj.push_back(static_cast<int32_t>(i));
            S.tri_local.push_back(t);
        }
    }
    if (S.tris.empty()) return;

    S.bvh.build(S.verts, S.tris);

    // Resolve the sampling cone. The radar sits at the array pose origin;
    // all TX elements share one cone so every stratified ray carries the
    // same measure share.
    const Vec3 origin = array.radar_pose.translation;
    if (cfg.beam_half_angle > 0.0) {
        if (!finite3(cfg.beam_axis) || length(cfg.beam_axis) <= 0.0)
            throw ConfigError("trace config: beam_half_angle set but beam_axis is degenerate");
        S.beam_axis = normalized(cfg.beam_axis);
        S.beam_half = cfg.beam_half_angle;
    } else {
        Vec3 lo = S.verts[0], hi = S.verts[0];
        for (const auto& v : S.verts) {
            lo = {std::min(lo.x, v.x), std::min(lo.y, v.y), std::min(lo.z, v.z)};
            hi = {std::max(hi.x, v.x), std::max(hi.y, v.y), std::max(hi.z, v.z)};
        }
        const Vec3 center{0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.5 * (lo.z + hi.z)};
        double radius = 0.0;
        for (const auto& v : S.verts) radius = std::max(radius, length(v - center));
        const Vec3 rel = center - origin;
        const double dist = length(rel);
        if (dist <= 1.2 * radius || radius == 0.0) {
            S.beam_axis = dist > 0.0 ? normalized(rel) : Vec3{0.0, 0.0, 1.0};
            S.beam_half = radius == 0.0 ? 0.05 : kPi;
        } else {
            S.beam_axis = normalized(rel);
            S.beam_half = std::asin(1.2 * radius / dist);
        }
    }
    frame_of(S.beam_axis, S.beam_e1, S.beam_e2);
    S.cap_omega = 2.0 * kPi * (1.0 - std::cos(S.beam_half));
}

TraceContext::~TraceContext() = default;

int TraceContext::triangle_count() const { return impl_->n_tri(); }
double TraceContext::cap_solid_angle() const { return impl_->cap_omega; }

namespace {

// Plain |effective_reflectivity| for the roulette bound.
double reflectivity_mag(const RFMaterial& plain_mat, double cos_inc, double freq) {
    const DiffComplex r = effective_reflectivity(fresnel(plain_mat, DiffScalar{cos_inc}, freq));
    return std::sqrt(r.re.v * r.re.v + r.im.v * r.im.v);
}

// Walks one primary ray through up to max_bounces specular hits, recording
// the triangle chain. Plain arithmetic only; safe to run in parallel.
void discover_chain(const TraceContext::Impl& S, int tx, int slot, const Vec3& txp, Vec3 dir,
                    std::vector<ChainEntry>& chain) {
    const TraceConfig& cfg = S.cfg;
    double gain = pattern_gain(S.array->pattern, S.boresight, dir);
    if (gain <= 0.0) return;
    double len = 0.0;
    double bound_num = gain; // F * prod(|refl| cos); shrinks monotonically
    double rr = 1.0;
    Vec3 orig = txp;
    for (int depth = 0; depth < cfg.max_bounces; ++depth) {
        const auto hit = S.bvh.intersect(orig, dir);
        if (!hit) break;
        const int32_t g = hit->tri;
        const Vec3 point = orig + hit->t * dir;
        Vec3 n = S.interp_normal(g, hit->u, hit->v);
        double dn = dot(dir, n);
        if (dn > 0.0) {
            n = -n;
            dn = -dn;
        }
        const double cos_inc = -dn;
        if (!(cos_inc > 0.0)) break;
        len += hit->t;
        bound_num *= reflectivity_mag(S.plain_mats[S.tri_obj[g]],
                                      cos_inc > 1.0 ? 1.0 : cos_inc, cfg.carrier_freq) *
                     cos_inc;
        chain.push_back({g, rr});
        if (depth + 1 >= cfg.max_bounces) break;
        const double bound = bound_num / (4.0 * kPi * len);
        if (bound < cfg.russian_roulette_threshold) {
            const double p = bound / cfg.russian_roulette_threshold;
            const double u = rng_uniform(cfg.rng_seed, kRouletteStream, static_cast<uint64_t>(tx),
                                         static_cast<uint64_t>(slot), static_cast<uint64_t>(depth));
            if (u >= p) break;
            rr /= p;
        }
        dir = normalized(reflect(dir, n));
        orig = point;
    }
}

DiffScalar clamp_cos(DiffScalar c) {
    // Rounding can push a unit-vector dot a hair past 1; shift the value
    // back onto the domain without touching the gradient.
    if (c.v > 1.0) return c + DiffScalar{1.0 - c.v};
    return c;
}

// Replays one discovered chain differentiably and appends the completed
// paths (one per surviving bounce/RX combination).
void replay_chain(TraceContext& ctx, int tx, int slot_in_tx, const std::vector<ChainEntry>& chain,
                  const Vec3& strat_dir, int32_t centroid_gtri, int n_strat_hits,
                  std::vector<PathRecord>& out) {
    TraceContext::Impl& S = ctx.impl();
    const TraceConfig& cfg = S.cfg;
    const AntennaArray& array = *S.array;
    const int n_rx = static_cast<int>(array.rx_positions.size());
    const Vec3 txp = tx_world(array, tx);
    const DVec3 txd = to_diff(txp);
    const DVec3 bs = to_diff(S.boresight);

    DVec3 dir;
    DiffScalar w0;
    if (centroid_gtri >= 0) {
        auto& cache = *S.caches[S.tri_obj[centroid_gtri]];
        const int32_t lt = S.tri_local[centroid_gtri];
        const DVec3 rel = cache.triangle_centroid(lt) - txd;
        const DiffScalar r2 = dot(rel, rel);
        const DiffScalar r = sqrt(r2);
        dir = (DiffScalar{1.0} / r) * rel;
        const DiffScalar proj = dot(cache.face_cross(lt), dir);
        const double sgn = proj.v < 0.0 ? -0.5 : 0.5;
        const DiffScalar omega = DiffScalar{sgn} * proj / r2; // area * cos / r^2
        w0 = omega - DiffScalar{n_strat_hits * S.cap_omega /
                                static_cast<double>(cfg.rays_per_virtual_element)};
    } else {
        dir = to_diff(strat_dir);
        w0 = DiffScalar{S.cap_omega / static_cast<double>(cfg.rays_per_virtual_element)};
    }

    const DiffScalar F = pattern_gain(array.pattern, bs, dir);
    if (F.v <= 0.0) return;

    DVec3 orig = txd;
    DiffScalar len{0.0};
    DiffComplex refl{DiffScalar{1.0}, DiffScalar{0.0}};
    DiffScalar cosprod{1.0};

    for (size_t depth = 0; depth < chain.size(); ++depth) {
        const int32_t g = chain[depth].gtri;
        auto& cache = *S.caches[S.tri_obj[g]];
        const auto hit = intersect_triangle(cache, S.tri_local[g], orig, dir);
        if (!hit) break; // replay lost the surface; drop the remaining chain
        DVec3 n = hit->normal;
        if (val(dot(dir, n)) > 0.0) n = -n;
        DiffScalar cos_inc = DiffScalar{-1.0} * dot(dir, n);
        if (!(cos_inc.v > 0.0)) break;
        cos_inc = clamp_cos(cos_inc);
        len = len + hit->t;
        refl = refl * effective_reflectivity(
                          fresnel(S.scene->objects[S.tri_obj[g]].material, cos_inc,
                                  cfg.carrier_freq));
        cosprod = cosprod * cos_inc;

        const Vec3 point_plain = to_plain(hit->point);
        const Vec3 n_plain = to_plain(n);
        for (int rx = 0; rx < n_rx; ++rx) {
            const Vec3 rxp = rx_world(array, rx);
            const Vec3 seg = rxp - point_plain;
            const double dist = length(seg);
            if (!(dist > 0.0) || dot(seg, n_plain) <= 0.0) continue;

            DiffScalar vis{1.0};
            if (S.geom_taped) {
                const uint64_t key =
                    rng_hash(cfg.rng_seed, kProbeStream, static_cast<uint64_t>(tx),
                             static_cast<uint64_t>(slot_in_tx),
                             static_cast<uint64_t>(depth) * 65536u + static_cast<uint64_t>(rx));
                vis = reparameterized_visibility(ctx, hit->point, to_diff(rxp), key);
                if (vis.node < 0 && vis.v == 0.0) continue;
            } else {
                if (S.bvh.occluded(point_plain, (1.0 / dist) * seg, dist * (1.0 - 1e-9)))
                    continue;
            }

            const DVec3 rxd = to_diff(rxp);
            const DiffScalar G = pattern_gain(array.pattern, bs, normalized(hit->point - rxd));
            if (G.v <= 0.0 && G.node < 0) continue;
            const DiffScalar total = len + length(rxd - hit->point);
            const DiffScalar geo = F * G * cosprod / (DiffScalar{4.0 * kPi} * total);
            PathRecord rec;
            rec.tof = total / DiffScalar{kSpeedOfLight};
            rec.amplitude = geo * refl;
            rec.weight = w0 * DiffScalar{chain[depth].rr_scale} * vis;
            rec.tx_id = tx;
            rec.rx_id = rx;
            rec.bounce_count = static_cast<int>(depth) + 1;
            if (!std::isfinite(rec.amplitude.re.v) || !std::isfinite(rec.amplitude.im.v) ||
                !std::isfinite(rec.tof.v) || !std::isfinite(rec.weight.v))
                throw InternalFault("trace: non-finite path record (tx " + std::to_string(tx) +
                                    ", slot " + std::to_string(slot_in_tx) + ", bounce " +
                                    std::to_string(depth + 1) + ")");
            out.push_back(rec);
        }

        dir = normalized(reflect(dir, n));
        orig = hit->point;
    }
}

} // namespace

DiffScalar reparameterized_visibility(TraceContext& ctx, const DVec3& from, const DVec3& to,
                                      uint64_t probe_key) {
    TraceContext::Impl& S = ctx.impl();
    const Vec3 p = to_plain(from), q = to_plain(to);
    const Vec3 seg = q - p;
    const double dist = length(seg);
    if (!(dist > 0.0))
        throw ContractViolation("reparameterized_visibility: zero-length segment");
    const Vec3 mu = (1.0 / dist) * seg;
    const double tmax = dist * (1.0 - 1e-9);
    const auto center = S.bvh.intersect(p, mu, tmax);
    const double hard = center ? 0.0 : 1.0;
    if (!S.geom_taped) return DiffScalar{hard};

    // Probe the smoothing cone. Away from silhouettes all probes agree and
    // the result is an exact constant.
    const int m = S.cfg.visibility_probes;
    const double kappa = S.cfg.edge_smoothing_kappa;
    Vec3 e1, e2;
    frame_of(mu, e1, e2);
    std::vector<int32_t> blockers;
    std::vector<Vec3> probe_dirs;
    std::vector<bool> probe_vis;
    if (center) blockers.push_back(center->tri);
    int n_vis = 0;
    for (int k = 0; k < m; ++k) {
        const double u1 = rng_uniform(probe_key, static_cast<uint64_t>(k), 0);
        const double u2 = rng_uniform(probe_key, static_cast<uint64_t>(k), 1);
        double w = 1.0 + std::log(std::max(u1, 1e-300) +
                                  (1.0 - u1) * std::exp(-2.0 * kappa)) /
                             kappa;
        w = std::min(1.0, std::max(-1.0, w));
        const double sn = std::sqrt(std::max(0.0, 1.0 - w * w));
        const double phi = 2.0 * kPi * u2;
        const Vec3 d{w * mu.x + sn * (std::cos(phi) * e1.x + std::sin(phi) * e2.x),
                     w * mu.y + sn * (std::cos(phi) * e1.y + std::sin(phi) * e2.y),
                     w * mu.z + sn * (std::cos(phi) * e1.z + std::sin(phi) * e2.z)};
        const auto hit = S.bvh.intersect(p, d, tmax);
        probe_dirs.push_back(d);
        probe_vis.push_back(!hit);
        if (hit)
            blockers.push_back(hit->tri);
        else
            ++n_vis;
    }
    if (center && n_vis == 0) return DiffScalar{0.0};
    if (!center && n_vis == m) return DiffScalar{1.0};

    // The cone straddles a silhouette. Find the silhouette edge of the
    // blocking geometry nearest the segment direction.
    std::sort(blockers.begin(), blockers.end());
    blockers.erase(std::unique(blockers.begin(), blockers.end()), blockers.end());

    int32_t best_obj = -1, best_va = -1, best_vb = -1; // mesh-local vertex ids
    double best_abs = 2.0;
    for (int32_t g : blockers) {
        const int32_t oi = S.tri_obj[g];
        const TriangleMesh& mesh = S.scene->objects[oi].mesh;
        const int32_t lt = S.tri_local[g];
        const int32_t base = S.vert_base[oi];
        const auto& t = mesh.triangles[lt];
        auto facing = [&](int32_t tri) {
            const auto& tt = mesh.triangles[tri];
            const Vec3 a = S.verts[base + tt[0]];
            const Vec3 fc = cross(S.verts[base + tt[1]] - a, S.verts[base + tt[2]] - a);
            return dot(fc, p - a) > 0.0;
        };
        const bool self_facing = facing(lt);
        for (int e = 0; e < 3; ++e) {
            const int32_t vi = t[e], vj = t[(e + 1) % 3];
            int32_t other = -1;
            for (int32_t f : mesh.vertex_faces[vi]) {
                if (f == lt) continue;
                const auto& ft = mesh.triangles[f];
                if (ft[0] == vj || ft[1] == vj || ft[2] == vj) {
                    other = f;
                    break;
                }
            }
            if (other >= 0 && facing(other) == self_facing) continue; // interior edge
            const Vec3 va = S.verts[base + vi], vb = S.verts[base + vj];
            const Vec3 ah = normalized(va - p), bh = normalized(vb - p);
            const Vec3 mv = cross(ah, bh);
            const double ml = length(mv);
            if (!(ml > 1e-12)) continue;
            const double sd = dot(mu, (1.0 / ml) * mv);
            if (std::abs(sd) < best_abs) {
                best_abs = std::abs(sd);
                best_obj = oi;
                best_va = vi;
                best_vb = vj;
            }
        }
    }
    if (best_obj < 0) return DiffScalar{hard};

    // Orient the edge plane normal toward the visible side using the probe
    // classification (stable under small scene perturbations, unlike the
    // sign of the near-zero center distance itself).
    const int32_t base = S.vert_base[best_obj];
    const Vec3 va_p = S.verts[base + best_va], vb_p = S.verts[base + best_vb];
    const Vec3 m_plain = normalized(cross(normalized(va_p - p), normalized(vb_p - p)));
    double mean_vis = 0.0, mean_occ = 0.0;
    int c_vis = 0, c_occ = 0;
    for (int k = 0; k < m; ++k) {
        const double d = dot(probe_dirs[k], m_plain);
        if (probe_vis[k]) {
            mean_vis += d;
            ++c_vis;
        } else {
            mean_occ += d;
            ++c_occ;
        }
    }
    if (c_vis == 0 || c_occ == 0) return DiffScalar{hard};
    const double flip = (mean_vis / c_vis < mean_occ / c_occ) ? -1.0 : 1.0;

    auto& cache = *S.caches[best_obj];
    const DVec3 ah = normalized(cache.vertex(best_va) - from);
    const DVec3 bh = normalized(cache.vertex(best_vb) - from);
    const DVec3 mn = normalized(cross(ah, bh));
    const DVec3 mud = normalized(to - from);
    const DiffScalar sd = DiffScalar{flip} * dot(mud, mn);
    // Logistic ramp matched to the vMF cone width (logistic(1.702 x) tracks
    // the normal CDF); sd is the sine of the angular distance to the edge.
    const DiffScalar smooth =
        DiffScalar{1.0} / (DiffScalar{1.0} + exp(DiffScalar{-1.702 * std::sqrt(kappa)} * sd));
    if (S.cfg.hard_forward) return DiffScalar{hard} + (smooth - DiffScalar{smooth.v});
    return smooth;
}

std::vector<PathRecord> trace(const Scene& scene, const AntennaArray& array,
                              const TraceConfig& cfg) {
    TraceContext ctx(scene, array, cfg);
    TraceContext::Impl& S = ctx.impl();
    if (S.tris.empty()) return {};

    const int n_tx = static_cast<int>(array.tx_positions.size());
    const int n_tri = S.n_tri();
    const int n_strat = cfg.rays_per_virtual_element;
    const int n_slots = n_tri + n_strat;
    const int64_t total = static_cast<int64_t>(n_tx) * n_slots;

    // Discovery: slot layout is [centroid rays | stratified rays] per TX.
    std::vector<std::vector<ChainEntry>> chains(total);
    std::vector<Vec3> strat_dirs(static_cast<size_t>(n_tx) * n_strat);
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < total; ++idx) {
        const int tx = static_cast<int>(idx / n_slots);
        const int s = static_cast<int>(idx % n_slots);
        const Vec3 txp = tx_world(array, tx);
        Vec3 dir;
        if (s < n_tri) {
            const Vec3 rel = S.plain_centroid(s) - txp;
            const double r = length(rel);
            if (!(r > 0.0)) continue;
            dir = (1.0 / r) * rel;
        } else {
            dir = S.cap_sample(tx, s - n_tri);
            strat_dirs[static_cast<size_t>(tx) * n_strat + (s - n_tri)] = dir;
        }
        auto& chain = chains[idx];
        discover_chain(S, tx, s, txp, dir, chain);
        // A centroid ray must actually reach its own triangle; anything else
        // means the centroid is occluded and the slot is dropped (the
        // stratified rays cover whatever is in front).
        if (s < n_tri && !chain.empty() && chain[0].gtri != s) chain.clear();
    }

    // Control-variate bookkeeping: how many stratified rays of each TX landed
    // first on each triangle.
    std::vector<int> strat_hits(static_cast<size_t>(n_tx) * n_tri, 0);
    for (int tx = 0; tx < n_tx; ++tx)
        for (int i = 0; i < n_strat; ++i) {
            const auto& c = chains[static_cast<int64_t>(tx) * n_slots + n_tri + i];
            if (!c.empty()) ++strat_hits[static_cast<size_t>(tx) * n_tri + c[0].gtri];
        }

    // Replay. Serial when a tape is attached (node order is part of the
    // deterministic contract); parallel otherwise.
    std::vector<std::vector<PathRecord>> slot_paths(total);
    auto replay_slot = [&](int64_t idx) {
        const auto& chain = chains[idx];
        if (chain.empty()) return;
        const int tx = static_cast<int>(idx / n_slots);
        const int s = static_cast<int>(idx % n_slots);
        const bool is_centroid = s < n_tri;
        replay_chain(ctx, tx, s, chain,
                     is_centroid ? Vec3{} : strat_dirs[static_cast<size_t>(tx) * n_strat +
                                                       (s - n_tri)],
                     is_centroid ? s : -1,
                     is_centroid ? strat_hits[static_cast<size_t>(tx) * n_tri + s] : 0,
                     slot_paths[idx]);
    };
    if (S.any_taped) {
        for (int64_t idx = 0; idx < total; ++idx) replay_slot(idx);
    } else {
#pragma omp parallel for schedule(static)
        for (int64_t idx = 0; idx < total; ++idx) replay_slot(idx);
    }

    std::vector<PathRecord> out;
    size_t n = 0;
    for (const auto& v : slot_paths) n += v.size();
    out.reserve(n);
    for (auto& v : slot_paths) out.insert(out.end(), v.begin(), v.end());
    return out;
}

DiffScalar received_power(const std::vector<PathRecord>& paths) {
    DiffScalar acc{0.0};
    for (const auto& p : paths) acc = acc + p.weight * norm2(p.amplitude);
    return acc;
}

std::vector<ConvergenceRow> estimate_convergence(const Scene& scene, const AntennaArray& array,
                                                 const TraceConfig& cfg,
                                                 const std::vector<int>& n_list) {
    constexpr int kSeeds = 16;
    // Freeze the sampling cone once so every row integrates the same domain.
    TraceConfig frozen = cfg;
    {
        TraceContext probe(scene, array, cfg);
        if (probe.triangle_count() == 0) {
            std::vector<ConvergenceRow> rows;
            for (int n : n_list) rows.push_back({n, 0.0, 0.0});
            return rows;
        }
        frozen.beam_axis = probe.impl().beam_axis;
        frozen.beam_half_angle = probe.impl().beam_half;
    }
    std::vector<ConvergenceRow> rows;
    for (int n : n_list) {
        if (n < 1) throw ConfigError("estimate_convergence: ray counts must be >= 1");
        TraceConfig c = frozen;
        c.rays_per_virtual_element = n;
        double powers[kSeeds];
        for (int s = 0; s < kSeeds; ++s) {
            c.rng_seed = frozen.rng_seed + static_cast<uint64_t>(s);
            powers[s] = received_power(trace(scene, array, c)).v;
        }
        double mean = 0.0;
        for (double x : powers) mean += x;
        mean /= kSeeds;
        double var = 0.0;
        for (double x : powers) var += (x - mean) * (x - mean);
        var /= kSeeds - 1;
        rows.push_back({n, mean, var});
    }
    return rows;
}

} // namespace rfd
