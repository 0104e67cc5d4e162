#include "rfd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <sstream>

namespace rfd {

// ==================== OBJ ingestion ====================

namespace {

int32_t parse_face_index(const std::string& token, size_t vertex_count, const std::string& name,
                         int line_no) {
    // "3", "3/1", "3//2", "3/1/2" -> leading vertex index
    size_t slash = token.find('/');
    const std::string head = slash == std::string::npos ? token : token.substr(0, slash);
    int64_t idx = 0;
    try {
        idx = std::stoll(head);
    } catch (const std::exception&) {
        throw ConfigError(name + ":" + std::to_string(line_no) + ": bad face index '" + token +
                          "'");
    }
    if (idx < 0) idx = static_cast<int64_t>(vertex_count) + idx + 1; // relative
    if (idx < 1 || idx > static_cast<int64_t>(vertex_count))
        throw ConfigError(name + ":" + std::to_string(line_no) + ": face index " + head +
                          " out of range (have " + std::to_string(vertex_count) + " vertices)");
    return static_cast<int32_t>(idx - 1);
}

double signed_volume_term(const Vec3& a, const Vec3& b, const Vec3& c) {
    return dot(a, cross(b, c)) / 6.0;
}

// Makes winding consistent across edge-adjacent faces, then flips each closed
// component whose signed volume is negative so normals face outward.
int repair_winding(std::vector<Vec3>& vertices, std::vector<std::array<int32_t, 3>>& tris) {
    const size_t n = tris.size();
    std::map<std::pair<int32_t, int32_t>, std::vector<std::pair<int32_t, bool>>> edges;
    for (size_t f = 0; f < n; ++f) {
        for (int e = 0; e < 3; ++e) {
            int32_t a = tris[f][e], b = tris[f][(e + 1) % 3];
            const bool fwd = a < b;
            if (!fwd) std::swap(a, b);
            edges[{a, b}].emplace_back(static_cast<int32_t>(f), fwd);
        }
    }

    int flips = 0;
    std::vector<int8_t> state(n, 0); // 0 unvisited, 1 keep, 2 flipped
    std::vector<int32_t> component;
    auto edge_dir = [&](int32_t f, int32_t a, int32_t b) {
        // true if face f (after any flip) traverses a->b
        const auto& t = tris[f];
        for (int e = 0; e < 3; ++e)
            if (t[e] == a && t[(e + 1) % 3] == b) return true;
        return false;
    };

    for (size_t seed = 0; seed < n; ++seed) {
        if (state[seed] != 0) continue;
        component.clear();
        std::deque<int32_t> queue{static_cast<int32_t>(seed)};
        state[seed] = 1;
        while (!queue.empty()) {
            const int32_t f = queue.front();
            queue.pop_front();
            component.push_back(f);
            for (int e = 0; e < 3; ++e) {
                int32_t a = tris[f][e], b = tris[f][(e + 1) % 3];
                auto key = std::minmax(a, b);
                const auto& incident = edges[{key.first, key.second}];
                if (incident.size() != 2) continue; // boundary or non-manifold
                for (const auto& [g, unused] : incident) {
                    (void)unused;
                    if (g == f || state[g] != 0) continue;
                    // Consistent orientation: neighbor traverses the shared
                    // edge in the opposite direction.
                    if (edge_dir(g, a, b)) {
                        std::swap(tris[g][1], tris[g][2]);
                        state[g] = 2;
                        ++flips;
                    } else {
                        state[g] = 1;
                    }
                    queue.push_back(g);
                }
            }
        }
        double vol = 0.0;
        for (int32_t f : component)
            vol += signed_volume_term(vertices[tris[f][0]], vertices[tris[f][1]],
                                      vertices[tris[f][2]]);
        if (vol < -1e-12) {
            for (int32_t f : component) std::swap(tris[f][1], tris[f][2]);
            flips += static_cast<int>(component.size());
        }
    }
    return flips;
}

void compute_vertex_normals(TriangleMesh& m) {
    m.vertex_normals.assign(m.vertices.size(), Vec3{0, 0, 0});
    m.vertex_faces.assign(m.vertices.size(), {});
    for (size_t f = 0; f < m.triangles.size(); ++f) {
        const auto& t = m.triangles[f];
        const Vec3 c =
            cross(m.vertices[t[1]] - m.vertices[t[0]], m.vertices[t[2]] - m.vertices[t[0]]);
        for (int k = 0; k < 3; ++k) {
            Vec3& n = m.vertex_normals[t[k]];
            n = n + c; // area weighting via unnormalized cross
            m.vertex_faces[t[k]].push_back(static_cast<int32_t>(f));
        }
    }
    for (Vec3& n : m.vertex_normals) {
        const double len = std::sqrt(dot(n, n));
        n = len > 1e-30 ? (1.0 / len) * n : Vec3{0, 0, 1};
    }
}

} // namespace

TriangleMesh parse_obj(std::istream& in, const std::string& name) {
    TriangleMesh mesh;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x >> v.y >> v.z))
                throw ConfigError(name + ":" + std::to_string(line_no) + ": malformed vertex");
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int32_t> idx;
            std::string token;
            while (ls >> token)
                idx.push_back(parse_face_index(token, mesh.vertices.size(), name, line_no));
            if (idx.size() < 3)
                throw ConfigError(name + ":" + std::to_string(line_no) +
                                  ": face with fewer than 3 vertices");
            for (size_t k = 1; k + 1 < idx.size(); ++k) { // fan triangulation
                const std::array<int32_t, 3> t{idx[0], idx[k], idx[k + 1]};
                if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
                    ++mesh.degenerate_dropped;
                    continue;
                }
                const Vec3 c = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                                     mesh.vertices[t[2]] - mesh.vertices[t[0]]);
                if (dot(c, c) < 1e-24) {
                    ++mesh.degenerate_dropped;
                    continue;
                }
                mesh.triangles.push_back(t);
            }
        }
        // all other records (vn, vt, o, g, usemtl, comments) are ignored
    }
    if (mesh.triangles.empty())
        throw ConfigError(name + ": no valid triangles after ingestion" +
                          (mesh.degenerate_dropped
                               ? " (" + std::to_string(mesh.degenerate_dropped) +
                                     " degenerate faces dropped)"
                               : ""));
    mesh.flipped_in_repair = repair_winding(mesh.vertices, mesh.triangles);
    mesh.material_id.assign(mesh.triangles.size(), 0);
    compute_vertex_normals(mesh);
    return mesh;
}

TriangleMesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open OBJ file: " + path);
    return parse_obj(in, path);
}

void write_obj(const std::string& path, const std::vector<Vec3>& vertices,
               const std::vector<std::array<int32_t, 3>>& triangles) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write OBJ file: " + path);
    out.precision(9);
    for (const Vec3& v : vertices) out << "v " << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& t : triangles)
        out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
}

// ==================== transforms ====================

std::vector<DVec3> transform_mesh(const TriangleMesh& mesh, const Rigid& rp,
                                  const std::vector<DVec3>& displacement) {
    std::vector<DVec3> out(mesh.vertices.size());
    const DVec3 zero{};
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const DVec3& off = displacement.empty() ? zero : displacement[i];
        out[i] = apply_rigid(rp, to_diff(mesh.vertices[i]), off);
    }
    return out;
}

std::vector<Vec3> transform_mesh_plain(const TriangleMesh& mesh, const RigidPlain& rp,
                                       const std::vector<Vec3>& displacement) {
    std::vector<Vec3> out(mesh.vertices.size());
    const Vec3 zero{};
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& off = displacement.empty() ? zero : displacement[i];
        out[i] = apply_rigid(rp, mesh.vertices[i], off);
    }
    return out;
}

// ==================== BVH ====================

namespace {

struct Aabb {
    Vec3 lo{1e30, 1e30, 1e30}, hi{-1e30, -1e30, -1e30};
    void grow(const Vec3& p) {
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x);
        hi.y = std::max(hi.y, p.y);
        hi.z = std::max(hi.z, p.z);
    }
};

inline bool slab_hit(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d, double tmax,
                     double& tnear) {
    double tn = 0.0, tf = tmax;
    const double ov[3] = {o.x, o.y, o.z}, dv[3] = {d.x, d.y, d.z};
    const double lv[3] = {lo.x, lo.y, lo.z}, hv[3] = {hi.x, hi.y, hi.z};
    for (int k = 0; k < 3; ++k) {
        if (dv[k] == 0.0) {
            // parallel to this slab: inside or miss, no t constraint
            if (ov[k] < lv[k] || ov[k] > hv[k]) return false;
            continue;
        }
        const double inv = 1.0 / dv[k];
        double t0 = (lv[k] - ov[k]) * inv, t1 = (hv[k] - ov[k]) * inv;
        if (t0 > t1) std::swap(t0, t1);
        tn = std::max(tn, t0);
        tf = std::min(tf, t1);
        if (tn > tf) return false;
    }
    tnear = tn;
    return true;
}

} // namespace

void Bvh::build(const std::vector<Vec3>& vertices,
                const std::vector<std::array<int32_t, 3>>& triangles) {
    verts_ = &vertices;
    tris_ = &triangles;
    nodes_.clear();
    order_.resize(triangles.size());
    for (size_t i = 0; i < triangles.size(); ++i) order_[i] = static_cast<int32_t>(i);
    centroids_.resize(triangles.size());
    for (size_t i = 0; i < triangles.size(); ++i) {
        const auto& t = triangles[i];
        const Vec3 a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
        centroids_[i] = {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0,
                         (a.z + b.z + c.z) / 3.0};
    }
    if (!triangles.empty()) build_range(0, static_cast<int32_t>(triangles.size()));
}

int32_t Bvh::build_range(int32_t begin, int32_t end) {
    constexpr int32_t kMaxLeaf = 4;
    const int32_t id = static_cast<int32_t>(nodes_.size());
    nodes_.push_back({});

    Aabb box, cbox;
    for (int32_t i = begin; i < end; ++i) {
        const auto& t = (*tris_)[order_[i]];
        box.grow((*verts_)[t[0]]);
        box.grow((*verts_)[t[1]]);
        box.grow((*verts_)[t[2]]);
        cbox.grow(centroids_[order_[i]]);
    }
    nodes_[id].lo = box.lo;
    nodes_[id].hi = box.hi;

    const int32_t count = end - begin;
    const Vec3 ext{cbox.hi.x - cbox.lo.x, cbox.hi.y - cbox.lo.y, cbox.hi.z - cbox.lo.z};
    const int axis = ext.x >= ext.y ? (ext.x >= ext.z ? 0 : 2) : (ext.y >= ext.z ? 1 : 2);
    const double span = axis == 0 ? ext.x : axis == 1 ? ext.y : ext.z;

    if (count <= kMaxLeaf || span < 1e-12) {
        nodes_[id].start = begin;
        nodes_[id].count = count;
        return id;
    }

    const int32_t mid = begin + count / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int32_t a, int32_t b) {
                         const Vec3 &ca = centroids_[a], &cb = centroids_[b];
                         const double va = axis == 0 ? ca.x : axis == 1 ? ca.y : ca.z;
                         const double vb = axis == 0 ? cb.x : axis == 1 ? cb.y : cb.z;
                         return va < vb;
                     });
    const int32_t l = build_range(begin, mid);
    const int32_t r = build_range(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
}

std::optional<PlainHit> Bvh::intersect(const Vec3& orig, const Vec3& dir, double tmax) const {
    if (nodes_.empty()) return std::nullopt;
    std::optional<PlainHit> best;
    double best_t = tmax;
    int32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes_[stack[--sp]];
        double tnear;
        if (!slab_hit(n.lo, n.hi, orig, dir, best_t, tnear)) continue;
        if (n.count > 0) {
            for (int32_t i = n.start; i < n.start + n.count; ++i) {
                const int32_t tri = order_[i];
                const auto& t = (*tris_)[tri];
                TriHitT<double> h;
                if (moller_trumbore(orig, dir, (*verts_)[t[0]], (*verts_)[t[1]], (*verts_)[t[2]],
                                    h) &&
                    h.t < best_t) {
                    best_t = h.t;
                    best = PlainHit{h.t, h.u, h.v, tri};
                }
            }
        } else {
            // near child first: compare entry distances
            double tl = 0, tr = 0;
            const bool hl = slab_hit(nodes_[n.left].lo, nodes_[n.left].hi, orig, dir, best_t, tl);
            const bool hr =
                slab_hit(nodes_[n.right].lo, nodes_[n.right].hi, orig, dir, best_t, tr);
            if (hl && hr) {
                if (tl <= tr) {
                    stack[sp++] = n.right;
                    stack[sp++] = n.left;
                } else {
                    stack[sp++] = n.left;
                    stack[sp++] = n.right;
                }
            } else if (hl) {
                stack[sp++] = n.left;
            } else if (hr) {
                stack[sp++] = n.right;
            }
        }
    }
    return best;
}

bool Bvh::occluded(const Vec3& orig, const Vec3& dir, double tmax) const {
    if (nodes_.empty()) return false;
    int32_t stack[64];
    int sp = 0;
    stack[sp++] = 0;
    while (sp > 0) {
        const Node& n = nodes_[stack[--sp]];
        double tnear;
        if (!slab_hit(n.lo, n.hi, orig, dir, tmax, tnear)) continue;
        if (n.count > 0) {
            for (int32_t i = n.start; i < n.start + n.count; ++i) {
                const auto& t = (*tris_)[order_[i]];
                TriHitT<double> h;
                if (moller_trumbore(orig, dir, (*verts_)[t[0]], (*verts_)[t[1]], (*verts_)[t[2]],
                                    h) &&
                    h.t < tmax)
                    return true;
            }
        } else {
            stack[sp++] = n.left;
            stack[sp++] = n.right;
        }
    }
    return false;
}

int Bvh::depth_of(int32_t node) const {
    const Node& n = nodes_[node];
    if (n.count > 0) return 1;
    return 1 + std::max(depth_of(n.left), depth_of(n.right));
}

int Bvh::depth() const { return nodes_.empty() ? 0 : depth_of(0); }

std::optional<PlainHit> intersect_brute(const std::vector<Vec3>& vertices,
                                        const std::vector<std::array<int32_t, 3>>& triangles,
                                        const Vec3& orig, const Vec3& dir, double tmax) {
    std::optional<PlainHit> best;
    double best_t = tmax;
    for (size_t i = 0; i < triangles.size(); ++i) {
        const auto& t = triangles[i];
        TriHitT<double> h;
        if (moller_trumbore(orig, dir, vertices[t[0]], vertices[t[1]], vertices[t[2]], h) &&
            h.t < best_t) {
            best_t = h.t;
            best = PlainHit{h.t, h.u, h.v, static_cast<int32_t>(i)};
        }
    }
    return best;
}

// ==================== differentiable hits ====================

TransformCache::TransformCache(const TriangleMesh& mesh, const Rigid& rp,
                               const std::vector<DVec3>* disp)
    : mesh_(&mesh), rp_(rp), disp_(disp) {
    have_v_.assign(mesh.vertices.size(), 0);
    have_n_.assign(mesh.vertices.size(), 0);
    v_.resize(mesh.vertices.size());
    n_.resize(mesh.vertices.size());
}

const DVec3& TransformCache::vertex(int32_t i) {
    if (!have_v_[i]) {
        const DVec3 zero{};
        const DVec3& off = displaced() ? (*disp_)[i] : zero;
        v_[i] = apply_rigid(rp_, to_diff(mesh_->vertices[i]), off);
        have_v_[i] = 1;
    }
    return v_[i];
}

DVec3 TransformCache::face_cross(int32_t tri) {
    const auto& t = mesh_->triangles[tri];
    const DVec3& a = vertex(t[0]);
    const DVec3& b = vertex(t[1]);
    const DVec3& c = vertex(t[2]);
    return cross(b - a, c - a);
}

DVec3 TransformCache::vertex_normal(int32_t i) {
    if (!have_n_[i]) {
        if (!displaced()) {
            // Rigid motion with uniform scale preserves normal directions.
            n_[i] = rotate_axis_angle(rp_.rotation, to_diff(mesh_->vertex_normals[i]));
        } else {
            DVec3 acc{};
            for (int32_t f : mesh_->vertex_faces[i]) acc = acc + face_cross(f);
            n_[i] = normalized(acc);
        }
        have_n_[i] = 1;
    }
    return n_[i];
}

DVec3 TransformCache::triangle_centroid(int32_t tri) {
    const auto& t = mesh_->triangles[tri];
    const DVec3 s = vertex(t[0]) + vertex(t[1]) + vertex(t[2]);
    return {s.x * DiffScalar{1.0 / 3.0}, s.y * DiffScalar{1.0 / 3.0},
            s.z * DiffScalar{1.0 / 3.0}};
}

std::optional<Hit> intersect_triangle(TransformCache& cache, int32_t tri, const DVec3& orig,
                                      const DVec3& dir) {
    const auto& t = cache.mesh().triangles[tri];
    const DVec3& a = cache.vertex(t[0]);
    const DVec3& b = cache.vertex(t[1]);
    const DVec3& c = cache.vertex(t[2]);
    TriHitT<DiffScalar> h;
    if (!moller_trumbore(orig, dir, a, b, c, h)) return std::nullopt;

    Hit hit;
    hit.tri = tri;
    hit.t = h.t;
    // Clamp barycentrics for interpolation; inactive for interior hits.
    hit.u = h.u.v < 0.0 ? DiffScalar{0.0} : (h.u.v > 1.0 ? DiffScalar{1.0} : h.u);
    hit.v = h.v.v < 0.0 ? DiffScalar{0.0} : (h.v.v > 1.0 ? DiffScalar{1.0} : h.v);
    hit.point = orig + h.t * dir;
    const DiffScalar w = DiffScalar{1.0} - hit.u - hit.v;
    const DVec3 n0 = cache.vertex_normal(t[0]);
    const DVec3 n1 = cache.vertex_normal(t[1]);
    const DVec3 n2 = cache.vertex_normal(t[2]);
    const DVec3 ni{w * n0.x + hit.u * n1.x + hit.v * n2.x, w * n0.y + hit.u * n1.y + hit.v * n2.y,
                   w * n0.z + hit.u * n1.z + hit.v * n2.z};
    hit.normal = normalized(ni);
    return hit;
}

} // namespace rfd
