// Conforming tetrahedral mesh with region tags, tagged boundary faces and
// longest-edge bisection refinement.
//
// Refinement rule: a tet is always split through the midpoint of its longest
// edge; ties are broken by the lexicographically smallest (min id, max id)
// vertex pair, so refinement is deterministic and face subdivisions agree
// between the two tets sharing a face. Conformity closure repeatedly bisects
// any tet that has a hanging vertex on one of its edges, in tet-id order,
// until none remain.
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "afem/core.hpp"

namespace afem {

enum class Region : std::uint8_t { Molecular = 0, Solvent = 1 };
enum class BoundaryTag : std::uint8_t { Dirichlet = 0, Neumann = 1 };

struct Vertex {
    Vec3 pos;
    bool on_boundary = false;
};

// Local edge numbering of a tet (pairs of local vertex slots).
inline constexpr std::array<std::array<int, 2>, 6> kTetEdges = {
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

struct Tet {
    std::array<std::int32_t, 4> v;
    Region region = Region::Solvent;
    std::int8_t refinement_edge = 0;  // local index into kTetEdges of the longest edge
    std::int32_t generation = 0;      // bisection depth below the level-0 ancestor
};

using FaceKey = std::array<std::int32_t, 3>;  // sorted vertex triple

inline FaceKey make_face_key(std::int32_t a, std::int32_t b, std::int32_t c) {
    FaceKey k = {a, b, c};
    std::sort(k.begin(), k.end());
    return k;
}

struct ConformityReport {
    bool ok = true;
    std::vector<std::string> violations;
};

struct ShapeQuality {
    double min_dihedral_deg = 0;  // over all tets
    double max_aspect = 0;        // longest edge / (2*sqrt(6)*inradius); 1 for a regular tet
};

class Mesh {
  public:
    Mesh() = default;

    // Raw constructor for hand-built meshes (tests, loaders). Checks
    // orientation, assigns refinement edges and marks boundary vertices from
    // the boundary face list.
    Mesh(std::vector<Vertex> vertices, std::vector<std::array<std::int32_t, 4>> tets,
         std::vector<Region> regions, std::vector<std::pair<FaceKey, BoundaryTag>> boundary_faces);

    std::size_t vertex_count() const { return verts_.size(); }
    std::size_t tet_count() const { return tets_.size(); }
    const Vertex& vertex(std::size_t i) const { return verts_[i]; }
    const Tet& tet(std::size_t i) const { return tets_[i]; }
    const std::vector<Vertex>& vertices() const { return verts_; }
    const std::vector<Tet>& tets() const { return tets_; }
    const std::map<FaceKey, BoundaryTag>& boundary_faces() const { return boundary_; }

    std::uint64_t lineage_id() const { return lineage_; }
    std::uint32_t generation_id() const {
        return static_cast<std::uint32_t>(vertex_count_history_.size() - 1);
    }
    // Vertex count after each completed refinement (index = generation id).
    const std::vector<std::size_t>& vertex_count_history() const { return vertex_count_history_; }
    // Endpoints of the edge a vertex was created on; {-1,-1} for level-0 vertices.
    const std::vector<std::array<std::int32_t, 2>>& vertex_parents() const {
        return vertex_parents_;
    }

    Vec3 barycenter(std::size_t t) const {
        const auto& T = tets_[t];
        return 0.25 * (verts_[T.v[0]].pos + verts_[T.v[1]].pos + verts_[T.v[2]].pos +
                       verts_[T.v[3]].pos);
    }

    double tet_volume(std::size_t t) const {
        const auto& T = tets_[t];
        const Vec3 e1 = verts_[T.v[1]].pos - verts_[T.v[0]].pos;
        const Vec3 e2 = verts_[T.v[2]].pos - verts_[T.v[0]].pos;
        const Vec3 e3 = verts_[T.v[3]].pos - verts_[T.v[0]].pos;
        return dot(e1, cross(e2, e3)) / 6.0;
    }

    double region_volume(Region r) const {
        double v = 0;
        for (std::size_t t = 0; t < tets_.size(); ++t)
            if (tets_[t].region == r) v += tet_volume(t);
        return v;
    }

    // Longest edge of tet t (diameter).
    double tet_diameter(std::size_t t) const {
        const auto& T = tets_[t];
        double best = 0;
        for (const auto& e : kTetEdges)
            best = std::max(best, dist_sq(verts_[T.v[e[0]]].pos, verts_[T.v[e[1]]].pos));
        return std::sqrt(best);
    }

    // Bisects every marked tet at least once, then restores conformity.
    // `max_bisections` of 0 selects the default cap of 100 * |marked|.
    void bisect_in_place(const std::vector<std::int32_t>& marked, std::size_t max_bisections = 0);

    friend Mesh build_cube_mesh(const Vec3& lo, const Vec3& hi, int n,
                                const std::function<Region(const Vec3&)>& classifier,
                                BoundaryTag boundary_tag);
    friend Mesh load_mesh(std::istream& in);

  private:
    std::int8_t longest_edge(const std::array<std::int32_t, 4>& v) const;
    void bisect_once(std::size_t t,
                     std::unordered_map<std::uint64_t, std::int32_t>& edge_midpoint);

    std::vector<Vertex> verts_;
    std::vector<Tet> tets_;
    std::map<FaceKey, BoundaryTag> boundary_;
    std::vector<std::array<std::int32_t, 2>> vertex_parents_;
    std::vector<std::size_t> vertex_count_history_ = {0};
    std::uint64_t lineage_ = 0;
};

namespace detail {

inline std::uint64_t edge_key(std::int32_t a, std::int32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

inline std::uint64_t next_lineage_id() {
    static std::uint64_t counter = 0;
    return ++counter;
}

}  // namespace detail

inline std::int8_t Mesh::longest_edge(const std::array<std::int32_t, 4>& v) const {
    std::int8_t best = 0;
    double best_len = -1;
    std::int32_t best_lo = 0, best_hi = 0;
    for (std::int8_t e = 0; e < 6; ++e) {
        std::int32_t a = v[kTetEdges[e][0]], b = v[kTetEdges[e][1]];
        if (a > b) std::swap(a, b);
        const double len = dist_sq(verts_[a].pos, verts_[b].pos);
        if (len > best_len ||
            (len == best_len && (a < best_lo || (a == best_lo && b < best_hi)))) {
            best = e;
            best_len = len;
            best_lo = a;
            best_hi = b;
        }
    }
    return best;
}

inline Mesh::Mesh(std::vector<Vertex> vertices, std::vector<std::array<std::int32_t, 4>> tets,
                  std::vector<Region> regions,
                  std::vector<std::pair<FaceKey, BoundaryTag>> boundary_faces) {
    AFEM_REQUIRE(tets.size() == regions.size(), "one region tag per tet");
    verts_ = std::move(vertices);
    vertex_parents_.assign(verts_.size(), {-1, -1});
    vertex_count_history_ = {verts_.size()};
    lineage_ = detail::next_lineage_id();
    tets_.reserve(tets.size());
    for (std::size_t t = 0; t < tets.size(); ++t) {
        Tet T;
        T.v = tets[t];
        T.region = regions[t];
        tets_.push_back(T);
        AFEM_REQUIRE(tet_volume(t) > 0, "tet " + std::to_string(t) + " is degenerate or inverted");
        tets_[t].refinement_edge = longest_edge(T.v);
    }
    for (auto& [key, tag] : boundary_faces) {
        boundary_.emplace(key, tag);
        for (std::int32_t v : key) verts_[v].on_boundary = true;
    }
}

// 6-tet Kuhn subdivision of an n x n x n grid over the box [lo, hi]. Each tet
// is tagged by classifying sample points strictly inside it (barycenter plus
// four points pulled from the corners toward the barycenter); disagreement
// among the samples means the classifier's interface cuts through a grid cell
// and the requested n cannot resolve it.
inline Mesh build_cube_mesh(const Vec3& lo, const Vec3& hi, int n,
                            const std::function<Region(const Vec3&)>& classifier,
                            BoundaryTag boundary_tag = BoundaryTag::Dirichlet) {
    AFEM_REQUIRE(n >= 1, "subdivision count must be >= 1");
    AFEM_REQUIRE(hi.x > lo.x && hi.y > lo.y && hi.z > lo.z, "box must be nonempty");

    Mesh m;
    m.lineage_ = detail::next_lineage_id();
    const int nv = n + 1;
    auto vid = [nv](int i, int j, int k) { return (k * nv + j) * nv + i; };
    m.verts_.reserve(static_cast<std::size_t>(nv) * nv * nv);
    for (int k = 0; k < nv; ++k)
        for (int j = 0; j < nv; ++j)
            for (int i = 0; i < nv; ++i) {
                Vertex v;
                v.pos = {lo.x + (hi.x - lo.x) * i / n, lo.y + (hi.y - lo.y) * j / n,
                         lo.z + (hi.z - lo.z) * k / n};
                v.on_boundary = i == 0 || i == n || j == 0 || j == n || k == 0 || k == n;
                m.verts_.push_back(v);
            }
    m.vertex_parents_.assign(m.verts_.size(), {-1, -1});
    m.vertex_count_history_ = {m.verts_.size()};

    // The 6 permutations of the coordinate walk from a cell's min corner to
    // its max corner; all tets of a cell share the main diagonal.
    static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                        {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    m.tets_.reserve(static_cast<std::size_t>(n) * n * n * 6);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i)
                for (const auto& p : perms) {
                    int c[3] = {i, j, k};
                    Tet T;
                    T.v[0] = vid(c[0], c[1], c[2]);
                    for (int s = 0; s < 3; ++s) {
                        ++c[p[s]];
                        T.v[s + 1] = vid(c[0], c[1], c[2]);
                    }
                    m.tets_.push_back(T);
                    std::size_t t = m.tets_.size() - 1;
                    if (m.tet_volume(t) < 0) std::swap(m.tets_[t].v[2], m.tets_[t].v[3]);
                    AFEM_REQUIRE(m.tet_volume(t) > 0, "degenerate cell subdivision");
                }

    for (std::size_t t = 0; t < m.tets_.size(); ++t) {
        auto& T = m.tets_[t];
        T.refinement_edge = m.longest_edge(T.v);
        const Vec3 bc = m.barycenter(t);
        T.region = classifier(bc);
        for (int s = 0; s < 4; ++s) {
            const Vec3 probe = m.verts_[T.v[s]].pos + 0.0625 * (bc - m.verts_[T.v[s]].pos);
            if (classifier(probe) != T.region)
                throw MeshError("classifier interface is not aligned with the n=" +
                                std::to_string(n) + " grid (tet " + std::to_string(t) +
                                " straddles regions)");
        }
    }

    // All exterior faces carry the problem's boundary condition tag.
    auto bface = [&](int a, int b, int c) { m.boundary_.emplace(make_face_key(a, b, c), boundary_tag); };
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            // Every grid square on the box surface splits along its min->max
            // diagonal, matching the Kuhn cell subdivision.
            bface(vid(u, v, 0), vid(u + 1, v, 0), vid(u + 1, v + 1, 0));
            bface(vid(u, v, 0), vid(u, v + 1, 0), vid(u + 1, v + 1, 0));
            bface(vid(u, v, n), vid(u + 1, v, n), vid(u + 1, v + 1, n));
            bface(vid(u, v, n), vid(u, v + 1, n), vid(u + 1, v + 1, n));
            bface(vid(u, 0, v), vid(u + 1, 0, v), vid(u + 1, 0, v + 1));
            bface(vid(u, 0, v), vid(u, 0, v + 1), vid(u + 1, 0, v + 1));
            bface(vid(u, n, v), vid(u + 1, n, v), vid(u + 1, n, v + 1));
            bface(vid(u, n, v), vid(u, n, v + 1), vid(u + 1, n, v + 1));
            bface(vid(0, u, v), vid(0, u + 1, v), vid(0, u + 1, v + 1));
            bface(vid(0, u, v), vid(0, u, v + 1), vid(0, u + 1, v + 1));
            bface(vid(n, u, v), vid(n, u + 1, v), vid(n, u + 1, v + 1));
            bface(vid(n, u, v), vid(n, u, v + 1), vid(n, u + 1, v + 1));
        }
    return m;
}

inline void Mesh::bisect_once(std::size_t t,
                              std::unordered_map<std::uint64_t, std::int32_t>& edge_midpoint) {
    const Tet parent = tets_[t];
    const auto edge = kTetEdges[parent.refinement_edge];
    const std::int32_t a = parent.v[edge[0]], b = parent.v[edge[1]];

    const std::uint64_t key = detail::edge_key(a, b);
    std::int32_t mid;
    auto it = edge_midpoint.find(key);
    if (it != edge_midpoint.end()) {
        mid = it->second;
    } else {
        Vertex vm;
        vm.pos = 0.5 * (verts_[a].pos + verts_[b].pos);
        verts_.push_back(vm);
        vertex_parents_.push_back({std::min(a, b), std::max(a, b)});
        mid = static_cast<std::int32_t>(verts_.size() - 1);
        edge_midpoint.emplace(key, mid);
    }

    // Split the two faces of the parent that contain the refined edge; a
    // child face on the domain boundary inherits the parent face's tag.
    for (int s = 0; s < 4; ++s) {
        if (s == edge[0] || s == edge[1]) continue;
        const std::int32_t c = parent.v[s];
        auto bf = boundary_.find(make_face_key(a, b, c));
        if (bf != boundary_.end()) {
            const BoundaryTag tag = bf->second;
            boundary_.erase(bf);
            boundary_.emplace(make_face_key(a, mid, c), tag);
            boundary_.emplace(make_face_key(mid, b, c), tag);
            verts_[mid].on_boundary = true;
        }
    }

    // Replacing one endpoint of the split edge with the midpoint, slot order
    // unchanged, keeps both children positively oriented.
    Tet child0 = parent, child1 = parent;
    child0.v[edge[1]] = mid;
    child1.v[edge[0]] = mid;
    child0.generation = child1.generation = parent.generation + 1;
    child0.refinement_edge = longest_edge(child0.v);
    child1.refinement_edge = longest_edge(child1.v);
    tets_[t] = child0;
    tets_.push_back(child1);
}

inline void Mesh::bisect_in_place(const std::vector<std::int32_t>& marked,
                                  std::size_t max_bisections) {
    if (marked.empty()) return;

    std::vector<std::int32_t> work(marked);
    std::sort(work.begin(), work.end());
    work.erase(std::unique(work.begin(), work.end()), work.end());
    AFEM_REQUIRE(work.front() >= 0 && static_cast<std::size_t>(work.back()) < tets_.size(),
                 "marked tet id out of range");

    if (max_bisections == 0) max_bisections = 100 * work.size();
    std::size_t bisections = 0;
    auto budget = [&] {
        if (++bisections > max_bisections)
            throw MeshError("conformity closure exceeded " + std::to_string(max_bisections) +
                            " bisections; refinement genealogy is inconsistent");
    };

    std::unordered_map<std::uint64_t, std::int32_t> edge_midpoint;
    edge_midpoint.reserve(4 * work.size());

    for (std::int32_t t : work) {
        budget();
        bisect_once(static_cast<std::size_t>(t), edge_midpoint);
    }

    // Closure sweeps in tet-id order: any tet owning an edge that has been
    // given a midpoint is bisected (through its own longest edge) until the
    // hanging edge disappears. Repeat until a full sweep is clean.
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t t = 0; t < tets_.size(); ++t) {
            bool again = true;
            while (again) {
                again = false;
                const auto& v = tets_[t].v;
                for (const auto& e : kTetEdges) {
                    if (edge_midpoint.count(detail::edge_key(v[e[0]], v[e[1]]))) {
                        budget();
                        bisect_once(t, edge_midpoint);
                        changed = again = true;
                        break;
                    }
                }
            }
        }
    }
    vertex_count_history_.push_back(verts_.size());
}

inline Mesh bisect(const Mesh& mesh, const std::vector<std::int32_t>& marked,
                   std::size_t max_bisections = 0) {
    Mesh out = mesh;
    out.bisect_in_place(marked, max_bisections);
    return out;
}

// Face-matching check: every face of every tet must occur either twice
// (interior, identical vertex triples) or once with a boundary tag.
inline ConformityReport check_conformity(const Mesh& mesh) {
    ConformityReport rep;
    std::map<FaceKey, int> counts;
    for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
        const auto& v = mesh.tet(t).v;
        static constexpr int faces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
        for (const auto& f : faces) ++counts[make_face_key(v[f[0]], v[f[1]], v[f[2]])];
    }
    auto complain = [&](const FaceKey& f, const std::string& what) {
        rep.ok = false;
        if (rep.violations.size() < 50)
            rep.violations.push_back("face (" + std::to_string(f[0]) + "," +
                                     std::to_string(f[1]) + "," + std::to_string(f[2]) + ") " +
                                     what);
    };
    for (const auto& [face, count] : counts) {
        if (count > 2)
            complain(face, "shared by " + std::to_string(count) + " tets");
        else if (count == 1 && !mesh.boundary_faces().count(face))
            complain(face, "unpaired and not a boundary face");
        else if (count == 2 && mesh.boundary_faces().count(face))
            complain(face, "interior but tagged as boundary");
    }
    for (const auto& [face, tag] : mesh.boundary_faces()) {
        (void)tag;
        if (!counts.count(face)) complain(face, "tagged as boundary but not present in any tet");
    }
    return rep;
}

inline ShapeQuality shape_quality(const Mesh& mesh) {
    AFEM_REQUIRE(mesh.tet_count() > 0, "shape quality of an empty mesh");
    ShapeQuality q;
    q.min_dihedral_deg = 360;
    q.max_aspect = 0;
    for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
        const auto& T = mesh.tet(t);
        std::array<Vec3, 4> p;
        for (int i = 0; i < 4; ++i) p[i] = mesh.vertex(T.v[i]).pos;

        double longest = 0;
        for (const auto& e : kTetEdges) longest = std::max(longest, dist_sq(p[e[0]], p[e[1]]));
        longest = std::sqrt(longest);

        // Dihedral angle along each edge, between the two faces containing it.
        for (const auto& e : kTetEdges) {
            int c = -1, d = -1;
            for (int s = 0; s < 4; ++s)
                if (s != e[0] && s != e[1]) (c < 0 ? c : d) = s;
            const Vec3 along = p[e[1]] - p[e[0]];
            const Vec3 n1 = cross(along, p[c] - p[e[0]]);
            const Vec3 n2 = cross(along, p[d] - p[e[0]]);
            const double cosang =
                std::clamp(dot(n1, n2) / (norm(n1) * norm(n2)), -1.0, 1.0);
            q.min_dihedral_deg =
                std::min(q.min_dihedral_deg, std::acos(cosang) * 180.0 / M_PI);
        }

        const double vol = mesh.tet_volume(t);
        double area = 0;
        static constexpr int faces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
        for (const auto& f : faces)
            area += 0.5 * norm(cross(p[f[1]] - p[f[0]], p[f[2]] - p[f[0]]));
        const double inradius = 3.0 * vol / area;
        q.max_aspect = std::max(q.max_aspect, longest / (2.0 * std::sqrt(6.0) * inradius));
    }
    return q;
}

}  // namespace afem
