// Piecewise-linear finite elements on a tetrahedral mesh: assembly of the
// diffusion form, the semilinear residual and its Newton linearization,
// boundary handling, energy norms and inter-mesh prolongation.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "afem/core.hpp"
#include "afem/mesh.hpp"
#include "afem/quadrature.hpp"
#include "afem/sparse.hpp"

namespace afem {

// Vertex coefficients of a P1 function, pinned to one mesh generation.
struct FeFunction {
    std::uint64_t mesh_lineage = 0;
    std::uint32_t mesh_generation = 0;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

struct CoefficientField {
    double eps_m = 1, eps_s = 1;        // diffusion per region, both > 0
    double kappa2_m = 0, kappa2_s = 0;  // ionic-strength coefficient per region, >= 0

    double eps(Region r) const { return r == Region::Molecular ? eps_m : eps_s; }
    double kappa2(Region r) const { return r == Region::Molecular ? kappa2_m : kappa2_s; }

    void validate() const {
        AFEM_REQUIRE(eps_m > 0 && eps_s > 0, "diffusion coefficients must be positive");
        AFEM_REQUIRE(kappa2_m >= 0 && kappa2_s >= 0, "kappa^2 must be nonnegative");
    }
};

struct ExactSolution {
    std::function<double(const Vec3&)> value;
    std::function<Vec3(const Vec3&)> gradient;
};

struct ProblemSpec {
    CoefficientField coeff;
    std::function<double(const Vec3&)> rhs;      // forcing term f
    BoundaryTag bc_type = BoundaryTag::Dirichlet;
    std::function<double(const Vec3&)> bc_data;  // boundary data g
    std::optional<ExactSolution> exact;

    void validate() const {
        coeff.validate();
        AFEM_REQUIRE(static_cast<bool>(rhs), "problem needs a right-hand side");
        if (bc_type == BoundaryTag::Neumann)
            AFEM_REQUIRE(coeff.kappa2_s > 0,
                         "pure Neumann problem needs kappa^2 > 0 in the solvent region");
    }
};

// Arguments of sinh/cosh are clamped to this magnitude; activations are
// counted so a diverging Newton trajectory is visible rather than an Inf.
inline constexpr double kNonlinearityClamp = 250.0;

inline double clamped(double u, std::size_t& clamp_events) {
    if (u > kNonlinearityClamp) {
        ++clamp_events;
        return kNonlinearityClamp;
    }
    if (u < -kNonlinearityClamp) {
        ++clamp_events;
        return -kNonlinearityClamp;
    }
    return u;
}

// One interior or boundary face; interior faces know both neighbors.
struct Face {
    FaceKey v;
    std::int32_t tet0 = -1, tet1 = -1;  // tet1 < 0 on the boundary
};

// Per-mesh geometry and sparsity cache shared by assembly, the estimator and
// the norms. Everything is immutable after construction.
class FeSpace {
  public:
    explicit FeSpace(const Mesh& mesh, int quadrature_degree = 4)
        : mesh_(&mesh), quad_(&tet_rule(quadrature_degree)) {
        build_geometry();
        build_faces();
        build_pattern();
        build_constraints();
    }

    const Mesh& mesh() const { return *mesh_; }
    const QuadratureRule& rule() const { return *quad_; }
    const CsrPattern& pattern() const { return pattern_; }
    const std::vector<Face>& faces() const { return faces_; }
    const std::vector<std::uint8_t>& dirichlet_mask() const { return dirichlet_; }
    std::size_t dof_count() const { return mesh_->vertex_count(); }

    double volume(std::size_t t) const { return volume_[t]; }
    const std::array<Vec3, 4>& basis_gradients(std::size_t t) const { return grad_[t]; }

    // Value of a P1 function at a quadrature point of tet t.
    double value_at(const FeFunction& u, std::size_t t, const std::array<double, 4>& bary) const {
        const auto& v = mesh_->tet(t).v;
        return bary[0] * u.values[v[0]] + bary[1] * u.values[v[1]] + bary[2] * u.values[v[2]] +
               bary[3] * u.values[v[3]];
    }

    Vec3 point_at(std::size_t t, const std::array<double, 4>& bary) const {
        const auto& v = mesh_->tet(t).v;
        return bary[0] * mesh_->vertex(v[0]).pos + bary[1] * mesh_->vertex(v[1]).pos +
               bary[2] * mesh_->vertex(v[2]).pos + bary[3] * mesh_->vertex(v[3]).pos;
    }

    Vec3 gradient_of(const FeFunction& u, std::size_t t) const {
        const auto& v = mesh_->tet(t).v;
        Vec3 g{0, 0, 0};
        for (int i = 0; i < 4; ++i) g += u.values[v[i]] * grad_[t][i];
        return g;
    }

    void check_function(const FeFunction& u) const {
        AFEM_REQUIRE(u.mesh_lineage == mesh_->lineage_id() &&
                         u.mesh_generation == mesh_->generation_id() &&
                         u.values.size() == mesh_->vertex_count(),
                     "FE function does not live on this mesh generation");
    }

    FeFunction make_function() const {
        FeFunction u;
        u.mesh_lineage = mesh_->lineage_id();
        u.mesh_generation = mesh_->generation_id();
        u.values.assign(mesh_->vertex_count(), 0.0);
        return u;
    }

  private:
    void build_geometry() {
        const std::size_t nt = mesh_->tet_count();
        volume_.resize(nt);
        grad_.resize(nt);
        for (std::size_t t = 0; t < nt; ++t) {
            const auto& v = mesh_->tet(t).v;
            const Vec3 p0 = mesh_->vertex(v[0]).pos;
            const Vec3 e1 = mesh_->vertex(v[1]).pos - p0;
            const Vec3 e2 = mesh_->vertex(v[2]).pos - p0;
            const Vec3 e3 = mesh_->vertex(v[3]).pos - p0;
            const double six_v = dot(e1, cross(e2, e3));
            if (!(six_v > 0))
                throw MeshError("degenerate tet " + std::to_string(t) + " in assembly");
            volume_[t] = six_v / 6.0;
            grad_[t][1] = cross(e2, e3) * (1.0 / six_v);
            grad_[t][2] = cross(e3, e1) * (1.0 / six_v);
            grad_[t][3] = cross(e1, e2) * (1.0 / six_v);
            grad_[t][0] = Vec3{0, 0, 0} - grad_[t][1] - grad_[t][2] - grad_[t][3];
        }
    }

    void build_faces() {
        struct Entry {
            FaceKey key;
            std::int32_t tet;
        };
        std::vector<Entry> entries;
        entries.reserve(4 * mesh_->tet_count());
        static constexpr int local_faces[4][3] = {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}};
        for (std::size_t t = 0; t < mesh_->tet_count(); ++t) {
            const auto& v = mesh_->tet(t).v;
            for (const auto& f : local_faces)
                entries.push_back({make_face_key(v[f[0]], v[f[1]], v[f[2]]),
                                   static_cast<std::int32_t>(t)});
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return a.key != b.key ? a.key < b.key : a.tet < b.tet;
        });
        faces_.reserve(entries.size() / 2 + mesh_->boundary_faces().size());
        for (std::size_t i = 0; i < entries.size();) {
            Face f;
            f.v = entries[i].key;
            f.tet0 = entries[i].tet;
            if (i + 1 < entries.size() && entries[i + 1].key == f.v) {
                f.tet1 = entries[i + 1].tet;
                i += 2;
            } else {
                ++i;
            }
            faces_.push_back(f);
        }
    }

    void build_pattern() {
        const std::size_t n = mesh_->vertex_count();
        std::vector<std::int64_t> count(n + 1, 0);
        for (const auto& T : mesh_->tets())
            for (int i = 0; i < 4; ++i) count[T.v[i] + 1] += 4;
        for (std::size_t i = 0; i < n; ++i) count[i + 1] += count[i];

        std::vector<std::int32_t> cols(count[n]);
        std::vector<std::int64_t> cursor(count.begin(), count.end() - 1);
        for (const auto& T : mesh_->tets())
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) cols[cursor[T.v[i]]++] = T.v[j];

        pattern_.row_ptr.assign(n + 1, 0);
        pattern_.col.clear();
        pattern_.col.reserve(16 * n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto begin = cols.begin() + count[i], end = cols.begin() + count[i + 1];
            std::sort(begin, end);
            const auto last = std::unique(begin, end);
            pattern_.col.insert(pattern_.col.end(), begin, last);
            pattern_.row_ptr[i + 1] = static_cast<std::int64_t>(pattern_.col.size());
        }
    }

    void build_constraints() {
        dirichlet_.assign(mesh_->vertex_count(), 0);
        for (const auto& [face, tag] : mesh_->boundary_faces())
            if (tag == BoundaryTag::Dirichlet)
                for (std::int32_t v : face) dirichlet_[v] = 1;
    }

    const Mesh* mesh_;
    const QuadratureRule* quad_;
    std::vector<double> volume_;
    std::vector<std::array<Vec3, 4>> grad_;
    std::vector<Face> faces_;
    CsrPattern pattern_;
    std::vector<std::uint8_t> dirichlet_;
};

// Stiffness matrix: entries sum_tet eps(tet) * vol * grad_i . grad_j, exact
// for P1 (no quadrature involved).
inline CsrMatrix assemble_stiffness(const FeSpace& space, const CoefficientField& coeff) {
    coeff.validate();
    CsrMatrix A;
    A.pattern = &space.pattern();
    A.zero();
    for (std::size_t t = 0; t < space.mesh().tet_count(); ++t) {
        const auto& T = space.mesh().tet(t);
        const double ev = coeff.eps(T.region) * space.volume(t);
        const auto& g = space.basis_gradients(t);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) A.add(T.v[i], T.v[j], ev * dot(g[i], g[j]));
    }
    return A;
}

// Load vector (f, phi_i).
inline std::vector<double> assemble_load(const FeSpace& space,
                                         const std::function<double(const Vec3&)>& f) {
    std::vector<double> load(space.dof_count(), 0.0);
    const auto& rule = space.rule();
    for (std::size_t t = 0; t < space.mesh().tet_count(); ++t) {
        const auto& v = space.mesh().tet(t).v;
        const double vol = space.volume(t);
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double wf = vol * rule.weights[q] * f(space.point_at(t, rule.bary[q]));
            for (int i = 0; i < 4; ++i) load[v[i]] += wf * rule.bary[q][i];
        }
    }
    return load;
}

// Nonlinear term (kappa^2 sinh(u), phi_i), accumulated into r.
inline void add_nonlinear_residual(const FeSpace& space, const FeFunction& u,
                                   const CoefficientField& coeff, std::vector<double>& r,
                                   std::size_t& clamp_events) {
    const auto& rule = space.rule();
    for (std::size_t t = 0; t < space.mesh().tet_count(); ++t) {
        const auto& T = space.mesh().tet(t);
        const double k2 = coeff.kappa2(T.region);
        if (k2 == 0) continue;
        const double vol = space.volume(t);
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double uq = clamped(space.value_at(u, t, rule.bary[q]), clamp_events);
            const double w = vol * rule.weights[q] * k2 * std::sinh(uq);
            for (int i = 0; i < 4; ++i) r[T.v[i]] += w * rule.bary[q][i];
        }
    }
}

// Residual entries a(u, phi_i) + (kappa^2 sinh(u), phi_i) - (f, phi_i), with
// Dirichlet rows zeroed. `stiffness_times_u` and `load` let callers reuse
// per-mesh work; both are recomputed when absent.
inline std::vector<double> assemble_residual(const FeSpace& space, const FeFunction& u,
                                             const ProblemSpec& spec, std::size_t& clamp_events,
                                             const CsrMatrix* stiffness = nullptr,
                                             const std::vector<double>* load = nullptr) {
    space.check_function(u);
    std::vector<double> r(space.dof_count(), 0.0);
    if (stiffness) {
        stiffness->mult(u.values, r);
    } else {
        const CsrMatrix A = assemble_stiffness(space, spec.coeff);
        A.mult(u.values, r);
    }
    add_nonlinear_residual(space, u, spec.coeff, r, clamp_events);
    if (load) {
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= (*load)[i];
    } else {
        const std::vector<double> l = assemble_load(space, spec.rhs);
        for (std::size_t i = 0; i < r.size(); ++i) r[i] -= l[i];
    }
    if (spec.bc_type == BoundaryTag::Dirichlet)
        for (std::size_t i = 0; i < r.size(); ++i)
            if (space.dirichlet_mask()[i]) r[i] = 0.0;
    return r;
}

inline std::vector<double> assemble_residual(const FeSpace& space, const FeFunction& u,
                                             const ProblemSpec& spec) {
    std::size_t clamp_events = 0;
    return assemble_residual(space, u, spec, clamp_events);
}

// Newton operator: stiffness plus the linearized-nonlinearity mass term
// (kappa^2 cosh(u) phi_i, phi_j). Symmetric, and positive definite once the
// Dirichlet rows are eliminated.
inline CsrMatrix assemble_jacobian(const FeSpace& space, const FeFunction& u,
                                   const CoefficientField& coeff, std::size_t& clamp_events,
                                   const CsrMatrix* stiffness = nullptr) {
    space.check_function(u);
    CsrMatrix J;
    J.pattern = &space.pattern();
    if (stiffness)
        J.val = stiffness->val;
    else
        J = assemble_stiffness(space, coeff);

    const auto& rule = space.rule();
    for (std::size_t t = 0; t < space.mesh().tet_count(); ++t) {
        const auto& T = space.mesh().tet(t);
        const double k2 = coeff.kappa2(T.region);
        if (k2 == 0) continue;
        const double vol = space.volume(t);
        double local[4][4] = {};
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double uq = clamped(space.value_at(u, t, rule.bary[q]), clamp_events);
            const double w = vol * rule.weights[q] * k2 * std::cosh(uq);
            const auto& b = rule.bary[q];
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) local[i][j] += w * b[i] * b[j];
        }
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) J.add(T.v[i], T.v[j], local[i][j]);
    }
    return J;
}

inline CsrMatrix assemble_jacobian(const FeSpace& space, const FeFunction& u,
                                   const CoefficientField& coeff) {
    std::size_t clamp_events = 0;
    return assemble_jacobian(space, u, coeff, clamp_events);
}

// Populates the constrained set with the nodal interpolant of g on the
// space's Dirichlet vertices and eliminates symmetrically.
inline void apply_dirichlet(SparseSystem& sys, const FeSpace& space,
                            const std::function<double(const Vec3&)>& g) {
    sys.constrained.assign(space.dof_count(), 0);
    sys.constrained_values.assign(space.dof_count(), 0.0);
    for (std::size_t i = 0; i < space.dof_count(); ++i)
        if (space.dirichlet_mask()[i]) {
            sys.constrained[i] = 1;
            sys.constrained_values[i] = g(space.mesh().vertex(i).pos);
        }
    apply_dirichlet(sys);
}

// Nodal interpolation of the boundary data onto the Dirichlet vertices.
inline void set_dirichlet_values(const FeSpace& space, const ProblemSpec& spec, FeFunction& u) {
    if (spec.bc_type != BoundaryTag::Dirichlet) return;
    for (std::size_t i = 0; i < space.dof_count(); ++i)
        if (space.dirichlet_mask()[i]) u.values[i] = spec.bc_data(space.mesh().vertex(i).pos);
}

// Energy norm squared of a FE function: integral eps |grad w|^2 (exact).
inline double energy_norm_sq(const FeSpace& space, const FeFunction& w,
                             const CoefficientField& coeff) {
    space.check_function(w);
    double s = 0;
    for (std::size_t t = 0; t < space.mesh().tet_count(); ++t) {
        const Vec3 g = space.gradient_of(w, t);
        s += coeff.eps(space.mesh().tet(t).region) * space.volume(t) * dot(g, g);
    }
    return s;
}

// Energy norm squared of (w - w_h) for a callable gradient, by quadrature of
// the requested degree.
inline double energy_error_sq(const FeSpace& space, const FeFunction& w_h,
                              const std::function<Vec3(const Vec3&)>& grad_w,
                              const CoefficientField& coeff, int degree = 4) {
    space.check_function(w_h);
    const QuadratureRule& rule = tet_rule(degree);
    double s = 0;
    for (std::size_t t = 0; t < space.mesh().tet_count(); ++t) {
        const Vec3 gh = space.gradient_of(w_h, t);
        const double ev = coeff.eps(space.mesh().tet(t).region) * space.volume(t);
        double local = 0;
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const Vec3 d = grad_w(space.point_at(t, rule.bary[q])) - gh;
            local += rule.weights[q] * dot(d, d);
        }
        s += ev * local;
    }
    return s;
}

// Exact P1 interpolation onto any refinement of the function's mesh: old
// vertices keep their values, each later vertex is the mean of its parent
// edge's endpoints, filled in creation order.
inline FeFunction prolongate(const FeFunction& u, const Mesh& target) {
    AFEM_REQUIRE(u.mesh_lineage == target.lineage_id(),
                 "prolongation target is not a refinement of the function's mesh");
    AFEM_REQUIRE(u.mesh_generation <= target.generation_id() &&
                     u.values.size() == target.vertex_count_history()[u.mesh_generation],
                 "function does not match an ancestor generation of the target mesh");
    FeFunction out;
    out.mesh_lineage = target.lineage_id();
    out.mesh_generation = target.generation_id();
    out.values = u.values;
    out.values.resize(target.vertex_count());
    const auto& parents = target.vertex_parents();
    for (std::size_t v = u.values.size(); v < out.values.size(); ++v)
        out.values[v] = 0.5 * (out.values[parents[v][0]] + out.values[parents[v][1]]);
    return out;
}

// Max-abs vertex value; P1 functions attain their extrema at vertices.
inline double max_norm(const FeFunction& u) {
    double m = 0;
    for (double v : u.values) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace afem
