#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "afem/fe.hpp"
#include "afem/mesh.hpp"
#include "afem/solver.hpp"

using namespace afem;

namespace {

Mesh unit_cube(int n) {
    return build_cube_mesh({0, 0, 0}, {1, 1, 1}, n, [](const Vec3&) { return Region::Solvent; });
}

Mesh pbe_box(int n) {
    auto half = [](const Vec3& p) {
        return std::max({std::abs(p.x), std::abs(p.y), std::abs(p.z)}) <= 0.5
                   ? Region::Molecular
                   : Region::Solvent;
    };
    return build_cube_mesh({-1, -1, -1}, {1, 1, 1}, n, half, BoundaryTag::Neumann);
}

FeFunction nodal(const FeSpace& space, const std::function<double(const Vec3&)>& f) {
    FeFunction u = space.make_function();
    for (std::size_t v = 0; v < space.dof_count(); ++v)
        u.values[v] = f(space.mesh().vertex(v).pos);
    return u;
}

// Independent local stiffness: invert the 4x4 Vandermonde-style matrix of
// [1 x y z] rows by Gaussian elimination; rows 1..3 of the inverse columns
// are the basis gradients.
std::array<std::array<double, 4>, 4> dense_local_stiffness(const std::array<Vec3, 4>& p,
                                                           double eps) {
    double m[4][8] = {};
    for (int i = 0; i < 4; ++i) {
        m[i][0] = 1;
        m[i][1] = p[i].x;
        m[i][2] = p[i].y;
        m[i][3] = p[i].z;
        m[i][4 + i] = 1;
    }
    for (int c = 0; c < 4; ++c) {
        int piv = c;
        for (int r = c + 1; r < 4; ++r)
            if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
        for (int k = 0; k < 8; ++k) std::swap(m[c][k], m[piv][k]);
        const double d = m[c][c];
        for (int k = 0; k < 8; ++k) m[c][k] /= d;
        for (int r = 0; r < 4; ++r) {
            if (r == c) continue;
            const double f = m[r][c];
            for (int k = 0; k < 8; ++k) m[r][k] -= f * m[c][k];
        }
    }
    // Column j of the inverse holds phi_j's coefficients (constant; x; y; z).
    std::array<Vec3, 4> grad;
    for (int j = 0; j < 4; ++j) grad[j] = {m[1][4 + j], m[2][4 + j], m[3][4 + j]};
    const double vol =
        std::abs(dot(p[1] - p[0], cross(p[2] - p[0], p[3] - p[0]))) / 6.0;
    std::array<std::array<double, 4>, 4> K{};
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) K[i][j] = eps * vol * dot(grad[i], grad[j]);
    return K;
}

}  // namespace

TEST_CASE("stiffness of a single tet matches the dense analytic oracle") {
    Mesh cube = unit_cube(1);
    std::vector<Vertex> verts;
    const auto& T = cube.tet(2);
    std::array<Vec3, 4> pts;
    for (int i = 0; i < 4; ++i) {
        Vertex v;
        v.pos = pts[i] = cube.vertex(T.v[i]).pos;
        verts.push_back(v);
    }
    std::vector<std::pair<FaceKey, BoundaryTag>> bdry;
    for (auto f : {make_face_key(0, 1, 2), make_face_key(0, 1, 3), make_face_key(0, 2, 3),
                   make_face_key(1, 2, 3)})
        bdry.emplace_back(f, BoundaryTag::Dirichlet);
    Mesh single(verts, {{0, 1, 2, 3}}, {Region::Solvent}, bdry);
    FeSpace space(single);

    const double eps = 3.25;
    CoefficientField coeff{1, eps, 0, 0};
    const CsrMatrix A = assemble_stiffness(space, coeff);
    const auto K = dense_local_stiffness(pts, eps);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(A.val[A.pattern->index(i, j)] ==
                  doctest::Approx(K[i][j]).epsilon(1e-13).scale(1.0));
}

TEST_CASE("stiffness annihilates constants and scales linearly in eps") {
    Mesh mesh = pbe_box(4);
    FeSpace space(mesh);
    CoefficientField coeff{2, 80, 0, 0};
    const CsrMatrix A = assemble_stiffness(space, coeff);

    std::vector<double> ones(space.dof_count(), 3.7), out(space.dof_count());
    A.mult(ones, out);
    for (double v : out) CHECK(std::abs(v) <= 1e-12 * A.max_abs());

    CoefficientField doubled{4, 160, 0, 0};
    const CsrMatrix A2 = assemble_stiffness(space, doubled);
    for (std::size_t k = 0; k < A.val.size(); ++k) CHECK(A2.val[k] == 2.0 * A.val[k]);
}

TEST_CASE("residual vanishes for an exact constant solution") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    const double c = 0.8, k2 = 1.5;
    ProblemSpec spec;
    spec.coeff = {1, 1, k2, k2};
    spec.bc_type = BoundaryTag::Dirichlet;
    spec.bc_data = [c](const Vec3&) { return c; };
    spec.rhs = [c, k2](const Vec3&) { return k2 * std::sinh(c); };

    FeFunction u = nodal(space, [c](const Vec3&) { return c; });
    const std::vector<double> r = assemble_residual(space, u, spec);
    const double scale = k2 * std::sinh(c);
    for (double v : r) CHECK(std::abs(v) <= 1e-12 * scale);
}

TEST_CASE("residual vanishes for the all-zero case") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    ProblemSpec spec;
    spec.coeff = {1, 1, 0, 0};
    spec.bc_type = BoundaryTag::Dirichlet;
    spec.bc_data = [](const Vec3&) { return 0.0; };
    spec.rhs = [](const Vec3&) { return 0.0; };
    FeFunction u = space.make_function();
    for (double v : assemble_residual(space, u, spec)) CHECK(v == 0.0);
}

TEST_CASE("degree-6 quadrature confirms the degree-4 residual on smooth data") {
    Mesh mesh = unit_cube(2);
    FeSpace space4(mesh, 4);
    FeSpace space6(mesh, 6);
    ProblemSpec spec;
    spec.coeff = {1, 1, 2.0, 2.0};
    spec.bc_type = BoundaryTag::Neumann;  // keep every row live
    spec.coeff.kappa2_m = spec.coeff.kappa2_s = 2.0;
    spec.bc_data = [](const Vec3&) { return 0.0; };
    spec.rhs = [](const Vec3& p) { return std::sin(p.x + 0.3 * p.y) + 0.2 * p.z; };

    FeFunction u4 = nodal(space4, [](const Vec3& p) {
        return 0.4 * std::cos(p.x) + 0.3 * p.y * p.z;
    });
    FeFunction u6 = u4;

    const std::vector<double> r4 = assemble_residual(space4, u4, spec);
    const std::vector<double> r6 = assemble_residual(space6, u6, spec);
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < r4.size(); ++i) {
        diff = std::max(diff, std::abs(r4[i] - r6[i]));
        scale = std::max(scale, std::abs(r6[i]));
    }
    CHECK(diff <= 1e-6 * scale);

    // Doubling the degree outright changes nothing beyond the same margin.
    FeSpace space8(mesh, 8);
    FeFunction u8 = u4;
    const std::vector<double> r8 = assemble_residual(space8, u8, spec);
    double diff8 = 0;
    for (std::size_t i = 0; i < r4.size(); ++i)
        diff8 = std::max(diff8, std::abs(r4[i] - r8[i]));
    CHECK(diff8 <= 1e-6 * scale);
}

TEST_CASE("linearized operator at u=0 is stiffness plus the exact mass matrix") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    const double k2 = 3.0;
    CoefficientField coeff{1, 1, k2, k2};
    FeFunction zero = space.make_function();
    const CsrMatrix A = assemble_stiffness(space, coeff);
    const CsrMatrix J = assemble_jacobian(space, zero, coeff);

    // Exact P1 mass matrix: V/10 on the diagonal, V/20 off it, per tet.
    CsrMatrix M;
    M.pattern = &space.pattern();
    M.zero();
    for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
        const auto& v = mesh.tet(t).v;
        const double V = space.volume(t);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) M.add(v[i], v[j], k2 * V / (i == j ? 10.0 : 20.0));
    }
    for (std::size_t k = 0; k < J.val.size(); ++k)
        CHECK(J.val[k] - A.val[k] == doctest::Approx(M.val[k]).epsilon(1e-12).scale(1e-6));
}

TEST_CASE("with the nonlinearity off the Jacobian is exactly the stiffness") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    CoefficientField coeff{1, 5, 0, 0};
    FeFunction u = nodal(space, [](const Vec3& p) { return p.x - 2 * p.y; });
    const CsrMatrix A = assemble_stiffness(space, coeff);
    const CsrMatrix J = assemble_jacobian(space, u, coeff);
    for (std::size_t k = 0; k < J.val.size(); ++k) CHECK(J.val[k] == A.val[k]);
}

TEST_CASE("finite differences confirm the Jacobian (O(t) consistency)") {
    // Small mesh and unit-scale coefficients keep the nonlinear signal above
    // the cancellation noise of the difference quotient at t = 1e-6.
    Mesh mesh = build_cube_mesh({0, 0, 0}, {1, 1, 1}, 2,
                                [](const Vec3&) { return Region::Solvent; },
                                BoundaryTag::Neumann);
    FeSpace space(mesh);
    ProblemSpec spec;
    spec.coeff = {0.1, 0.1, 100, 100};
    spec.bc_type = BoundaryTag::Neumann;
    spec.bc_data = [](const Vec3&) { return 0.0; };
    spec.rhs = [](const Vec3&) { return 1.0; };

    std::mt19937 rng(42);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    FeFunction u = space.make_function(), w = space.make_function();
    for (auto& v : u.values) v = dist(rng);
    for (auto& v : w.values) v = dist(rng);

    const CsrMatrix J = assemble_jacobian(space, u, spec.coeff);
    std::vector<double> Jw(space.dof_count());
    J.mult(w.values, Jw);
    const std::vector<double> r0 = assemble_residual(space, u, spec);

    std::vector<double> ts = {1e-4, 1e-5, 1e-6}, errs;
    for (double t : ts) {
        FeFunction ut = u;
        axpy(t, w.values, ut.values);
        const std::vector<double> rt = assemble_residual(space, ut, spec);
        double err = 0;
        for (std::size_t i = 0; i < rt.size(); ++i)
            err += std::pow((rt[i] - r0[i]) / t - Jw[i], 2);
        errs.push_back(std::sqrt(err));
    }
    // log-log slope across the three step sizes should be 1 within 5%.
    const double slope =
        std::log(errs.front() / errs.back()) / std::log(ts.front() / ts.back());
    CHECK(slope == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("Jacobian with constraints is symmetric positive definite") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    ProblemSpec spec;
    spec.coeff = {1, 1, 1, 1};
    spec.bc_type = BoundaryTag::Dirichlet;
    spec.bc_data = [](const Vec3&) { return 0.0; };
    spec.rhs = [](const Vec3&) { return 1.0; };

    std::mt19937 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    FeFunction u = space.make_function();
    for (auto& v : u.values) v = dist(rng);

    SparseSystem sys;
    sys.matrix = assemble_jacobian(space, u, spec.coeff);
    sys.rhs.assign(space.dof_count(), 0.0);
    sys.constrained.assign(space.dof_count(), 0);
    sys.constrained_values.assign(space.dof_count(), 0.0);
    for (std::size_t i = 0; i < space.dof_count(); ++i)
        sys.constrained[i] = space.dirichlet_mask()[i];
    apply_dirichlet(sys);

    // Exact symmetry of stored entries.
    const CsrPattern& p = *sys.matrix.pattern;
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::int64_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k)
            CHECK(sys.matrix.val[k] ==
                  sys.matrix.val[p.index(p.col[k], static_cast<std::int32_t>(i))]);

    // 50 random Rayleigh quotients stay positive.
    std::vector<double> x(space.dof_count()), Jx(space.dof_count());
    for (int trial = 0; trial < 50; ++trial) {
        for (auto& v : x) v = dist(rng);
        sys.matrix.mult(x, Jx);
        CHECK(dot(std::span<const double>(x), std::span<const double>(Jx)) > 0.0);
    }
}

TEST_CASE("Dirichlet elimination with zero data leaves free rows alone") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    CoefficientField coeff{1, 1, 0, 0};
    SparseSystem sys;
    sys.matrix = assemble_stiffness(space, coeff);
    sys.rhs.assign(space.dof_count(), 2.5);
    sys.constrained.assign(space.dof_count(), 0);
    sys.constrained_values.assign(space.dof_count(), 0.0);
    for (std::size_t i = 0; i < space.dof_count(); ++i)
        sys.constrained[i] = space.dirichlet_mask()[i];
    apply_dirichlet(sys);
    for (std::size_t i = 0; i < space.dof_count(); ++i)
        CHECK(sys.rhs[i] == (sys.constrained[i] ? 0.0 : 2.5));
}

TEST_CASE("patch test: linear Dirichlet data is reproduced exactly") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    auto linear = [](const Vec3& p) { return 0.75 * p.x - 1.5 * p.y + 0.25 * p.z + 2.0; };

    SparseSystem sys;
    sys.matrix = assemble_stiffness(space, CoefficientField{1, 1, 0, 0});
    sys.rhs.assign(space.dof_count(), 0.0);
    apply_dirichlet(sys, space, linear);

    SolverConfig config;
    config.cg_rel_tol = 1e-13;
    std::vector<double> x;
    const PcgResult res = pcg_solve(sys.matrix, sys.rhs, x, config);
    REQUIRE(res.converged);
    for (std::size_t v = 0; v < space.dof_count(); ++v)
        CHECK(x[v] == doctest::Approx(linear(mesh.vertex(v).pos)).epsilon(1e-10));
}

TEST_CASE("energy norm: constants, a linear ramp, and the matrix identity") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    CoefficientField coeff{1, 1, 0, 0};

    CHECK(energy_norm_sq(space, nodal(space, [](const Vec3&) { return 4.2; }), coeff) ==
          doctest::Approx(0.0).scale(1.0).epsilon(1e-14));

    // w = x on the unit cube: |grad w|^2 = 1 over volume 1.
    CHECK(energy_norm_sq(space, nodal(space, [](const Vec3& p) { return p.x; }), coeff) ==
          doctest::Approx(1.0).epsilon(1e-13));

    std::mt19937 rng(12);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    FeFunction u = space.make_function();
    for (auto& v : u.values) v = dist(rng);
    const CsrMatrix A = assemble_stiffness(space, coeff);
    std::vector<double> Au(space.dof_count());
    A.mult(u.values, Au);
    const double quad = dot(std::span<const double>(u.values), std::span<const double>(Au));
    CHECK(energy_norm_sq(space, u, coeff) == doctest::Approx(quad).epsilon(1e-12));
}

TEST_CASE("prolongation is exact on constants, linears, and in energy") {
    Mesh coarse = unit_cube(2);
    FeSpace cspace(coarse);
    auto linear = [](const Vec3& p) { return 1.0 - 2.0 * p.x + 0.5 * p.y + 3.0 * p.z; };

    std::mt19937 rng(3);
    Mesh fine = coarse;
    std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(coarse.tet_count()) - 1);
    fine.bisect_in_place({pick(rng), pick(rng), pick(rng), pick(rng)});
    FeSpace fspace(fine);

    const FeFunction cu = nodal(cspace, [](const Vec3&) { return 2.0; });
    for (double v : prolongate(cu, fine).values) CHECK(v == 2.0);

    const FeFunction lu = nodal(cspace, linear);
    const FeFunction lf = prolongate(lu, fine);
    for (std::size_t v = 0; v < fine.vertex_count(); ++v)
        CHECK(lf.values[v] == doctest::Approx(linear(fine.vertex(v).pos)).epsilon(1e-14));

    // Energy is preserved exactly on nested refinement (property, 20 draws).
    CoefficientField coeff{1, 1, 0, 0};
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        FeFunction u = cspace.make_function();
        for (auto& v : u.values) v = dist(rng);
        const double before = energy_norm_sq(cspace, u, coeff);
        const double after = energy_norm_sq(fspace, prolongate(u, fine), coeff);
        CHECK(after == doctest::Approx(before).epsilon(1e-12));
    }
}

TEST_CASE("prolongation rejects functions from unrelated meshes") {
    Mesh a = unit_cube(1), b = unit_cube(1);
    FeSpace sa(a);
    const FeFunction u = sa.make_function();
    CHECK_THROWS(prolongate(u, b));

    Mesh fine = bisect(a, {0});
    const FeSpace sf(fine);
    const FeFunction v = sf.make_function();
    CHECK_THROWS(prolongate(v, a));  // target is the ancestor, not a refinement
    CHECK_THROWS(energy_norm_sq(sa, v, CoefficientField{1, 1, 0, 0}));
}

TEST_CASE("max norm agrees with corner-inclusive sampling") {
    Mesh mesh = unit_cube(2);
    FeSpace space(mesh);
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> dist(-3.0, 2.0);
    FeFunction u = space.make_function();
    for (auto& v : u.values) v = dist(rng);

    CHECK(max_norm(space.make_function()) == 0.0);
    FeFunction two = space.make_function();
    two.values[0] = -3;
    two.values[1] = 2;
    CHECK(max_norm(two) == 3.0);

    // Corner samples attain the extrema of a P1 function; interior samples
    // can only fall below them.
    double sampled = 0;
    for (std::size_t t = 0; t < mesh.tet_count(); ++t)
        for (int corner = 0; corner < 4; ++corner) {
            std::array<double, 4> l = {0, 0, 0, 0};
            l[corner] = 1;
            sampled = std::max(sampled, std::abs(space.value_at(u, t, l)));
        }
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int s = 0; s < 10000; ++s) {
        const std::size_t t = s % mesh.tet_count();
        // Sorted uniforms give a uniform draw from the simplex.
        std::array<double, 3> d = {unit(rng), unit(rng), unit(rng)};
        std::sort(d.begin(), d.end());
        const std::array<double, 4> l = {d[0], d[1] - d[0], d[2] - d[1], 1 - d[2]};
        CHECK(std::abs(space.value_at(u, t, l)) <= max_norm(u) + 1e-12);
        sampled = std::max(sampled, std::abs(space.value_at(u, t, l)));
    }
    CHECK(sampled == doctest::Approx(max_norm(u)).epsilon(1e-12));
}
