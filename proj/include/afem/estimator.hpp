// Residual-based a posteriori error indicator and Dörfler marking with
// logarithmic binning.
#pragma once

#include <cmath>
#include <vector>

#include "afem/fe.hpp"

namespace afem {

struct ErrorIndicators {
    std::uint64_t mesh_lineage = 0;
    std::uint32_t mesh_generation = 0;
    std::vector<double> eta_sq;  // one per tet, >= 0
    double total_sq = 0;

    double total() const { return std::sqrt(total_sq); }
};

struct MarkSet {
    std::vector<std::int32_t> tets;
    double achieved_fraction = 0;  // marked eta^2 / total eta^2
    double theta = 0;
};

// Per-tet indicator
//   eta^2(tet) = h_tet^2 ||kappa^2 sinh(u) - f||^2_tet
//              + sum over faces h_face ||[eps grad(u) . n]||^2_face,
// with h the respective diameter. P1 gradients are constant per tet, so the
// face terms are exact; the volume term uses the space's quadrature rule.
// Interior faces contribute to both neighbors. Homogeneous-Neumann boundary
// faces contribute their full flux residual; Dirichlet faces contribute
// nothing.
inline ErrorIndicators estimate(const FeSpace& space, const FeFunction& u,
                                const ProblemSpec& spec) {
    space.check_function(u);
    const Mesh& mesh = space.mesh();
    ErrorIndicators ind;
    ind.mesh_lineage = mesh.lineage_id();
    ind.mesh_generation = mesh.generation_id();
    ind.eta_sq.assign(mesh.tet_count(), 0.0);

    const auto& rule = space.rule();
    std::size_t clamp_events = 0;
    for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
        const double k2 = spec.coeff.kappa2(mesh.tet(t).region);
        double volume_term = 0;
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double uq = clamped(space.value_at(u, t, rule.bary[q]), clamp_events);
            const double res = k2 * std::sinh(uq) - spec.rhs(space.point_at(t, rule.bary[q]));
            volume_term += rule.weights[q] * res * res;
        }
        const double h = mesh.tet_diameter(t);
        ind.eta_sq[t] = h * h * space.volume(t) * volume_term;
    }

    for (const Face& f : space.faces()) {
        const Vec3 p0 = mesh.vertex(f.v[0]).pos, p1 = mesh.vertex(f.v[1]).pos,
                   p2 = mesh.vertex(f.v[2]).pos;
        const Vec3 n_scaled = cross(p1 - p0, p2 - p0);  // |n_scaled| = 2 * area
        const double area = 0.5 * norm(n_scaled);
        const Vec3 n = (1.0 / (2.0 * area)) * n_scaled;
        const double h_face = std::sqrt(
            std::max({dist_sq(p0, p1), dist_sq(p0, p2), dist_sq(p1, p2)}));

        const double flux0 = spec.coeff.eps(mesh.tet(f.tet0).region) *
                             dot(space.gradient_of(u, f.tet0), n);
        if (f.tet1 >= 0) {
            const double flux1 = spec.coeff.eps(mesh.tet(f.tet1).region) *
                                 dot(space.gradient_of(u, f.tet1), n);
            const double jump_sq = (flux0 - flux1) * (flux0 - flux1);
            const double contrib = h_face * area * jump_sq;
            ind.eta_sq[f.tet0] += contrib;
            ind.eta_sq[f.tet1] += contrib;
        } else {
            auto tag = mesh.boundary_faces().find(f.v);
            AFEM_REQUIRE(tag != mesh.boundary_faces().end(),
                         "unpaired face without a boundary tag");
            if (tag->second == BoundaryTag::Neumann)
                ind.eta_sq[f.tet0] += h_face * area * flux0 * flux0;
        }
    }

    for (double e : ind.eta_sq) ind.total_sq += e;
    return ind;
}

// Dörfler marking in linear time. Elements are binned by floor(log2) of
// eta^2 relative to the maximum (64 bins, everything smaller pooled into the
// last); bins are consumed from the largest down, the final bin only as far
// as needed, until the marked eta^2 reaches theta^2 of the total. Values
// within a bin differ by at most 2x, which keeps the marked count within 2x
// of the sorted-greedy minimum.
inline MarkSet dorfler_mark(const ErrorIndicators& ind, double theta) {
    AFEM_REQUIRE(theta > 0 && theta <= 1, "marking parameter must lie in (0, 1]");
    MarkSet out;
    out.theta = theta;
    if (ind.total_sq <= 0) return out;

    if (theta == 1.0) {  // full marking: every element carrying error
        for (std::size_t t = 0; t < ind.eta_sq.size(); ++t)
            if (ind.eta_sq[t] > 0) out.tets.push_back(static_cast<std::int32_t>(t));
        out.achieved_fraction = 1.0;
        return out;
    }

    constexpr int kBins = 64;
    double max_eta = 0;
    for (double e : ind.eta_sq) max_eta = std::max(max_eta, e);

    std::array<std::vector<std::int32_t>, kBins> bins;
    for (std::size_t t = 0; t < ind.eta_sq.size(); ++t) {
        const double e = ind.eta_sq[t];
        if (e <= 0) continue;
        const int b = std::min(kBins - 1,
                               std::max(0, static_cast<int>(std::floor(std::log2(max_eta / e)))));
        bins[b].push_back(static_cast<std::int32_t>(t));
    }

    const double target = theta * theta * ind.total_sq;
    bool done = false;
    {
        double marked_sq = 0;
        for (int b = 0; b < kBins && !done; ++b) {
            for (std::int32_t t : bins[b]) {
                out.tets.push_back(t);
                marked_sq += ind.eta_sq[t];
                if (marked_sq >= target) {
                    done = true;
                    break;
                }
            }
        }
    }
    // Canonical id order. When rounding kept the partial sums from reaching
    // the target, every positive element is marked and the fraction is 1.
    std::sort(out.tets.begin(), out.tets.end());
    double marked_sq = 0;
    for (std::int32_t t : out.tets) marked_sq += ind.eta_sq[t];
    out.achieved_fraction = done ? marked_sq / ind.total_sq : 1.0;
    return out;
}

// Ratio of estimated to true error (effectivity index).
inline double effectivity(const ErrorIndicators& ind, double true_energy_error_sq) {
    AFEM_REQUIRE(true_energy_error_sq > 0, "effectivity needs a positive true error");
    return ind.total() / std::sqrt(true_energy_error_sq);
}

}  // namespace afem
