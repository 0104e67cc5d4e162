#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "rfd/adgraph.hpp"

// Triangle-mesh geometry: OBJ ingestion with winding repair, differentiable
// rigid + per-vertex-displacement transforms, Moller-Trumbore intersection
// (one templated implementation shared by the plain and differentiable
// paths), and a median-split BVH over plain values.

namespace rfd {

inline double val(double x) { return x; }
inline double val(const DiffScalar& x) { return x.v; }

template <class S>
struct V3 {
    S x{}, y{}, z{};
};

using Vec3 = V3<double>;
using DVec3 = V3<DiffScalar>;

template <class S> V3<S> operator+(const V3<S>& a, const V3<S>& b) {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
}
template <class S> V3<S> operator-(const V3<S>& a, const V3<S>& b) {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
}
template <class S> V3<S> operator-(const V3<S>& a) { return {-a.x, -a.y, -a.z}; }
template <class S, class T> V3<S> operator*(const T& s, const V3<S>& a) {
    return {S{s} * a.x, S{s} * a.y, S{s} * a.z};
}
template <class S> S dot(const V3<S>& a, const V3<S>& b) {
    return a.x * b.x + a.y * b.y + a.z * b.z;
}
template <class S> V3<S> cross(const V3<S>& a, const V3<S>& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
template <class S> S length(const V3<S>& a) { return sqrt(dot(a, a)); }
template <class S> V3<S> normalized(const V3<S>& a) {
    const S inv = S{1.0} / length(a);
    return {a.x * inv, a.y * inv, a.z * inv};
}

inline Vec3 to_plain(const DVec3& a) { return {a.x.v, a.y.v, a.z.v}; }
inline DVec3 to_diff(const Vec3& a) { return {DiffScalar{a.x}, DiffScalar{a.y}, DiffScalar{a.z}}; }

// Mirror direction of d off a surface with unit normal n.
template <class S> V3<S> reflect(const V3<S>& d, const V3<S>& n) {
    const S two_dn = S{2.0} * dot(d, n);
    return {d.x - two_dn * n.x, d.y - two_dn * n.y, d.z - two_dn * n.z};
}

// ---- mesh ----

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int32_t, 3>> triangles;
    std::vector<int32_t> material_id;          // per triangle, default 0
    std::vector<Vec3> vertex_normals;          // area-weighted, unit length
    std::vector<std::vector<int32_t>> vertex_faces; // adjacency for normal recompute
    int degenerate_dropped = 0;
    int flipped_in_repair = 0;

    Vec3 centroid(int32_t tri) const {
        const auto& t = triangles[tri];
        const Vec3 a = vertices[t[0]], b = vertices[t[1]], c = vertices[t[2]];
        return {(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0, (a.z + b.z + c.z) / 3.0};
    }
};

// Loads an ASCII OBJ (v/f records; polygons fan-triangulated; degenerate
// faces dropped). Repairs winding to be consistent per connected component
// and outward for closed components, then computes area-weighted vertex
// normals. Throws ConfigError on unreadable files, out-of-range indices, or
// meshes with zero valid triangles.
TriangleMesh load_obj(const std::string& path);
TriangleMesh parse_obj(std::istream& in, const std::string& name);

void write_obj(const std::string& path, const std::vector<Vec3>& vertices,
               const std::vector<std::array<int32_t, 3>>& triangles);

// ---- transforms ----

// Pose parameters. Rotation is an axis-angle (exponential-map) vector;
// scale is uniform and kept positive by optimizing its logarithm upstream.
template <class S>
struct RigidT {
    V3<S> translation{};
    V3<S> rotation{}; // axis-angle
    S scale{1.0};
};

using Rigid = RigidT<DiffScalar>;
using RigidPlain = RigidT<double>;

// Rodrigues rotation, smooth at zero angle (series branch below 1e-6 rad).
template <class S>
V3<S> rotate_axis_angle(const V3<S>& aa, const V3<S>& v) {
    const S theta2 = dot(aa, aa);
    S A, B;
    if (val(theta2) < 1e-12) {
        A = S{1.0} - theta2 * S{1.0 / 6.0};
        B = S{0.5} - theta2 * S{1.0 / 24.0};
    } else {
        const S theta = sqrt(theta2);
        A = sin(theta) / theta;
        B = (S{1.0} - cos(theta)) / theta2;
    }
    const V3<S> kv = cross(aa, v);
    const V3<S> kkv = cross(aa, kv);
    return {v.x + A * kv.x + B * kkv.x, v.y + A * kv.y + B * kkv.y, v.z + A * kv.z + B * kkv.z};
}

// v' = R(rot) * (s * (v + offset)) + t
template <class S>
V3<S> apply_rigid(const RigidT<S>& rp, const V3<S>& v, const V3<S>& offset) {
    const V3<S> scaled{rp.scale * (v.x + offset.x), rp.scale * (v.y + offset.y),
                       rp.scale * (v.z + offset.z)};
    return rotate_axis_angle(rp.rotation, scaled) + rp.translation;
}

// Transforms every vertex. `displacement` may be empty (treated as zero).
std::vector<DVec3> transform_mesh(const TriangleMesh& mesh, const Rigid& rp,
                                  const std::vector<DVec3>& displacement = {});
std::vector<Vec3> transform_mesh_plain(const TriangleMesh& mesh, const RigidPlain& rp,
                                       const std::vector<Vec3>& displacement = {});

// ---- intersection ----

inline constexpr double kBaryEps = 1e-9;   // barycentric acceptance slack
inline constexpr double kDetEps = 1e-12;   // parallel-ray determinant rejection
inline constexpr double kRayTmin = 1e-9;   // minimum hit distance

template <class S>
struct TriHitT {
    S t, u, v;
};

// Watertight-enough Moller-Trumbore. Returns false for parallel rays
// (|det| < kDetEps), backface-agnostic. u/v are clamped to [0,1] for
// downstream interpolation after acceptance testing with kBaryEps slack.
template <class S>
bool moller_trumbore(const V3<S>& orig, const V3<S>& dir, const V3<S>& a, const V3<S>& b,
                     const V3<S>& c, TriHitT<S>& out, double tmin = kRayTmin) {
    const V3<S> e1 = b - a;
    const V3<S> e2 = c - a;
    const V3<S> p = cross(dir, e2);
    const S det = dot(e1, p);
    if (std::abs(val(det)) < kDetEps) return false;
    const S inv = S{1.0} / det;
    const V3<S> s = orig - a;
    const S u = dot(s, p) * inv;
    if (val(u) < -kBaryEps || val(u) > 1.0 + kBaryEps) return false;
    const V3<S> q = cross(s, e1);
    const S v = dot(dir, q) * inv;
    if (val(v) < -kBaryEps || val(u) + val(v) > 1.0 + kBaryEps) return false;
    const S t = dot(e2, q) * inv;
    if (val(t) <= tmin) return false;
    out.t = t;
    out.u = u;
    out.v = v;
    return true;
}

struct PlainHit {
    double t, u, v;
    int32_t tri; // index into the triangle list the query ran against
};

// ---- BVH ----

// Median-split BVH (longest axis, max 4 triangles per leaf) over plain
// world-space vertices. Built once per scene configuration; gradients do not
// flow through the hierarchy, only through the per-triangle hit replays.
class Bvh {
public:
    void build(const std::vector<Vec3>& vertices,
               const std::vector<std::array<int32_t, 3>>& triangles);

    std::optional<PlainHit> intersect(const Vec3& orig, const Vec3& dir,
                                      double tmax = 1e30) const;
    bool occluded(const Vec3& orig, const Vec3& dir, double tmax) const;

    int depth() const;
    bool empty() const { return nodes_.empty(); }

private:
    struct Node {
        Vec3 lo, hi;
        int32_t left = -1, right = -1; // internal
        int32_t start = 0, count = 0;  // leaf when count > 0
    };

    int32_t build_range(int32_t begin, int32_t end);
    int depth_of(int32_t node) const;

    const std::vector<Vec3>* verts_ = nullptr;
    const std::vector<std::array<int32_t, 3>>* tris_ = nullptr;
    std::vector<Node> nodes_;
    std::vector<int32_t> order_; // triangle indices, permuted
    std::vector<Vec3> centroids_;
};

// Nearest hit by exhaustive scan; the BVH correctness oracle.
std::optional<PlainHit> intersect_brute(const std::vector<Vec3>& vertices,
                                        const std::vector<std::array<int32_t, 3>>& triangles,
                                        const Vec3& orig, const Vec3& dir, double tmax = 1e30);

// ---- differentiable hit against a known triangle ----

struct Hit {
    DiffScalar t;
    DiffScalar u, v;
    DVec3 point;
    DVec3 normal; // interpolated vertex normal, unit length
    int32_t tri = -1;
};

// Lazily transforms vertices of one mesh instance and recomputes vertex
// normals differentiably where displacement demands it. With rigid-only
// poses, world vertex normals are the rotated base normals.
class TransformCache {
public:
    TransformCache(const TriangleMesh& mesh, const Rigid& rp, const std::vector<DVec3>* disp);

    const TriangleMesh& mesh() const { return *mesh_; }
    const DVec3& vertex(int32_t i);
    DVec3 vertex_normal(int32_t i);
    DVec3 triangle_centroid(int32_t tri);
    // Unnormalized face normal cross(e1, e2); length is 2x area.
    DVec3 face_cross(int32_t tri);

    bool displaced() const { return disp_ != nullptr && !disp_->empty(); }
    const Rigid& rigid() const { return rp_; }

private:
    const TriangleMesh* mesh_;
    Rigid rp_;
    const std::vector<DVec3>* disp_;
    std::vector<char> have_v_, have_n_;
    std::vector<DVec3> v_, n_;
};

// Differentiable intersection of a ray with a known triangle of a transformed
// mesh: returns hit distance, point, and interpolated unit normal with
// gradients flowing to the pose/displacement parameters feeding `cache`.
std::optional<Hit> intersect_triangle(TransformCache& cache, int32_t tri, const DVec3& orig,
                                      const DVec3& dir);

} // namespace rfd
