// Text serialization: mesh files, FE function dumps, indicator dumps and the
// per-level CSV. All reals are written with 17 significant digits.
#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "afem/estimator.hpp"
#include "afem/fe.hpp"
#include "afem/mesh.hpp"

namespace afem {

inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Mesh file layout:
//   vertices <count>
//   x y z boundary_flag            (one line per vertex)
//   tets <count>
//   v0 v1 v2 v3 region generation  (region: 0 molecular, 1 solvent)
//   boundary_faces <count>
//   v0 v1 v2 tag                   (tag: 0 Dirichlet, 1 Neumann)
inline void save_mesh(const Mesh& mesh, std::ostream& out) {
    out << "vertices " << mesh.vertex_count() << "\n";
    for (const Vertex& v : mesh.vertices())
        out << format_real(v.pos.x) << ' ' << format_real(v.pos.y) << ' ' << format_real(v.pos.z)
            << ' ' << (v.on_boundary ? 1 : 0) << "\n";
    out << "tets " << mesh.tet_count() << "\n";
    for (const Tet& t : mesh.tets())
        out << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' ' << t.v[3] << ' '
            << static_cast<int>(t.region) << ' ' << t.generation << "\n";
    out << "boundary_faces " << mesh.boundary_faces().size() << "\n";
    for (const auto& [face, tag] : mesh.boundary_faces())
        out << face[0] << ' ' << face[1] << ' ' << face[2] << ' ' << static_cast<int>(tag)
            << "\n";
}

// Loads a mesh written by save_mesh. The result is a fresh root mesh:
// refinement ancestry is not serialized, so cross-generation prolongation
// does not apply to loaded meshes.
inline Mesh load_mesh(std::istream& in) {
    auto expect = [&](const std::string& keyword) {
        std::string word;
        in >> word;
        if (word != keyword) throw MeshError("mesh file: expected '" + keyword + "'");
        std::size_t n;
        if (!(in >> n)) throw MeshError("mesh file: missing count after '" + keyword + "'");
        return n;
    };

    Mesh m;
    m.lineage_ = detail::next_lineage_id();
    const std::size_t nv = expect("vertices");
    m.verts_.resize(nv);
    for (auto& v : m.verts_) {
        int flag;
        if (!(in >> v.pos.x >> v.pos.y >> v.pos.z >> flag))
            throw MeshError("mesh file: truncated vertex list");
        v.on_boundary = flag != 0;
    }
    m.vertex_parents_.assign(nv, {-1, -1});
    m.vertex_count_history_ = {nv};

    const std::size_t nt = expect("tets");
    m.tets_.resize(nt);
    for (std::size_t t = 0; t < nt; ++t) {
        auto& T = m.tets_[t];
        int region;
        if (!(in >> T.v[0] >> T.v[1] >> T.v[2] >> T.v[3] >> region >> T.generation))
            throw MeshError("mesh file: truncated tet list");
        T.region = region == 0 ? Region::Molecular : Region::Solvent;
        for (int i = 0; i < 4; ++i)
            if (T.v[i] < 0 || static_cast<std::size_t>(T.v[i]) >= nv)
                throw MeshError("mesh file: tet vertex id out of range");
        if (!(m.tet_volume(t) > 0))
            throw MeshError("mesh file: tet " + std::to_string(t) + " is degenerate or inverted");
        T.refinement_edge = m.longest_edge(T.v);
    }

    const std::size_t nb = expect("boundary_faces");
    for (std::size_t i = 0; i < nb; ++i) {
        std::int32_t a, b, c;
        int tag;
        if (!(in >> a >> b >> c >> tag)) throw MeshError("mesh file: truncated boundary list");
        m.boundary_.emplace(make_face_key(a, b, c),
                            tag == 0 ? BoundaryTag::Dirichlet : BoundaryTag::Neumann);
    }
    return m;
}

inline void save_mesh(const Mesh& mesh, const std::string& path) {
    std::ofstream out(path);
    AFEM_REQUIRE(out.good(), "cannot open '" + path + "' for writing");
    save_mesh(mesh, out);
}

inline Mesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    AFEM_REQUIRE(in.good(), "cannot open '" + path + "'");
    return load_mesh(in);
}

// FE function dump: "fefunction <generation> <count>" then one value per line.
inline void save_fe_function(const FeFunction& u, std::ostream& out) {
    out << "fefunction " << u.mesh_generation << ' ' << u.values.size() << "\n";
    for (double v : u.values) out << format_real(v) << "\n";
}

inline FeFunction load_fe_function(std::istream& in) {
    std::string word;
    std::size_t count;
    FeFunction u;
    if (!(in >> word >> u.mesh_generation >> count) || word != "fefunction")
        throw Error("bad fefunction header");
    u.values.resize(count);
    for (auto& v : u.values)
        if (!(in >> v)) throw Error("truncated fefunction dump");
    return u;
}

// Indicator dump: "eta <generation> <count>" then one eta^2 per line.
inline void save_indicators(const ErrorIndicators& ind, std::ostream& out) {
    out << "eta " << ind.mesh_generation << ' ' << ind.eta_sq.size() << "\n";
    for (double e : ind.eta_sq) out << format_real(e) << "\n";
}

}  // namespace afem
