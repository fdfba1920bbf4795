// Volume quadrature on tetrahedra.
//
// Rules are generated at runtime as conical products: Gauss-Legendre points
// on [0,1]^3 pushed through the Duffy map
//     x = u,  y = v(1-u),  z = w(1-u)(1-v),   |J| = (1-u)^2 (1-v),
// which is exact for all polynomials up to the requested total degree and
// has strictly positive weights. Nodes are stored in barycentric form with
// weights normalized to sum to 1, so
//     integral over tet = volume(tet) * sum_q w_q f(x_q).
#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "afem/core.hpp"

namespace afem {

struct QuadratureRule {
    std::vector<std::array<double, 4>> bary;  // barycentric coordinates per point
    std::vector<double> weights;              // sum to 1
    int degree = 0;                           // total polynomial degree integrated exactly

    std::size_t size() const { return weights.size(); }

    Vec3 point(std::size_t q, const Vec3& p0, const Vec3& p1, const Vec3& p2,
               const Vec3& p3) const {
        const auto& l = bary[q];
        return l[0] * p0 + l[1] * p1 + l[2] * p2 + l[3] * p3;
    }
};

// Gauss-Legendre nodes/weights on [-1,1], by Newton iteration on P_m.
inline void gauss_legendre(int m, std::vector<double>& nodes, std::vector<double>& weights) {
    AFEM_REQUIRE(m >= 1, "Gauss-Legendre order must be positive");
    nodes.assign(m, 0.0);
    weights.assign(m, 0.0);
    const int half = (m + 1) / 2;
    for (int i = 0; i < half; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (m + 0.5));
        double dp = 0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= m; ++k) {
                double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = m * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = weights[m - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
}

namespace detail {

inline QuadratureRule make_tet_rule(int degree) {
    // Degrees of the Duffy-mapped integrand per direction: d+2, d+1, d.
    auto points_for = [](int poly_degree) { return poly_degree / 2 + 1; };
    const int mu = points_for(degree + 2), mv = points_for(degree + 1), mw = points_for(degree);

    std::vector<double> xu, wu, xv, wv, xw, ww;
    gauss_legendre(mu, xu, wu);
    gauss_legendre(mv, xv, wv);
    gauss_legendre(mw, xw, ww);
    auto to01 = [](std::vector<double>& x, std::vector<double>& w) {
        for (auto& v : x) v = 0.5 * (v + 1.0);
        for (auto& v : w) v *= 0.5;
    };
    to01(xu, wu);
    to01(xv, wv);
    to01(xw, ww);

    QuadratureRule rule;
    rule.degree = degree;
    for (int a = 0; a < mu; ++a)
        for (int b = 0; b < mv; ++b)
            for (int c = 0; c < mw; ++c) {
                const double u = xu[a], v = xv[b], w = xw[c];
                const double x = u;
                const double y = v * (1.0 - u);
                const double z = w * (1.0 - u) * (1.0 - v);
                // Duffy weight, scaled by 6 so the weights sum to 1.
                rule.weights.push_back(6.0 * wu[a] * wv[b] * ww[c] * (1.0 - u) * (1.0 - u) *
                                       (1.0 - v));
                rule.bary.push_back({1.0 - x - y - z, x, y, z});
            }
    return rule;
}

}  // namespace detail

// Shared per-degree rule cache (single-threaded construction is assumed).
inline const QuadratureRule& tet_rule(int degree) {
    static std::map<int, QuadratureRule> cache;
    auto it = cache.find(degree);
    if (it == cache.end()) it = cache.emplace(degree, detail::make_tet_rule(degree)).first;
    return it->second;
}

}  // namespace afem
