// CSR storage for the symmetric vertex-by-vertex operators and symmetric
// Dirichlet elimination.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afem/core.hpp"

namespace afem {

// Shared sparsity of all operators assembled on one mesh: row i holds the
// sorted vertex neighborhood of vertex i (including i itself).
struct CsrPattern {
    std::vector<std::int64_t> row_ptr;
    std::vector<std::int32_t> col;

    std::size_t rows() const { return row_ptr.empty() ? 0 : row_ptr.size() - 1; }
    std::size_t nnz() const { return col.size(); }

    // Position of entry (i, j); the pattern is closed under the meshes'
    // element graphs, so lookups never miss.
    std::int64_t index(std::int32_t i, std::int32_t j) const {
        std::int64_t lo = row_ptr[i], hi = row_ptr[i + 1] - 1;
        while (lo < hi) {
            const std::int64_t mid = (lo + hi) / 2;
            if (col[mid] < j)
                lo = mid + 1;
            else
                hi = mid;
        }
        return lo;
    }
};

struct CsrMatrix {
    const CsrPattern* pattern = nullptr;
    std::vector<double> val;

    std::size_t rows() const { return pattern->rows(); }

    void zero() { val.assign(pattern->nnz(), 0.0); }

    void add(std::int32_t i, std::int32_t j, double v) { val[pattern->index(i, j)] += v; }

    void mult(std::span<const double> x, std::span<double> y) const {
        const auto& p = *pattern;
        const std::size_t n = p.rows();
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0;
            for (std::int64_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k)
                s += val[k] * x[p.col[k]];
            y[i] = s;
        }
    }

    std::vector<double> diagonal() const {
        const auto& p = *pattern;
        std::vector<double> d(p.rows());
        for (std::size_t i = 0; i < p.rows(); ++i)
            d[i] = val[p.index(static_cast<std::int32_t>(i), static_cast<std::int32_t>(i))];
        return d;
    }

    double max_abs() const {
        double m = 0;
        for (double v : val) m = std::max(m, std::abs(v));
        return m;
    }
};

// A linear system with an explicit constrained set (Dirichlet vertices).
struct SparseSystem {
    CsrMatrix matrix;
    std::vector<double> rhs;
    std::vector<std::uint8_t> constrained;      // one flag per vertex
    std::vector<double> constrained_values;     // prescribed value where constrained
};

// Symmetric elimination: constrained columns are moved to the right-hand
// side, constrained rows/columns zeroed, unit diagonal installed and the
// prescribed value written into the rhs, so solutions interpolate the data
// exactly. Keeps the operator symmetric positive definite.
inline void apply_dirichlet(SparseSystem& sys) {
    const auto& p = *sys.matrix.pattern;
    const std::size_t n = p.rows();
    AFEM_REQUIRE(sys.constrained.size() == n && sys.rhs.size() == n,
                 "system size mismatch in Dirichlet elimination");

    for (std::size_t i = 0; i < n; ++i) {
        if (!sys.constrained[i]) continue;
        const double gi = sys.constrained_values[i];
        // Row i of a symmetric matrix is column i.
        for (std::int64_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
            const std::int32_t j = p.col[k];
            if (!sys.constrained[j]) sys.rhs[j] -= sys.matrix.val[k] * gi;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const bool ci = sys.constrained[i];
        for (std::int64_t k = p.row_ptr[i]; k < p.row_ptr[i + 1]; ++k) {
            const std::int32_t j = p.col[k];
            if (ci || sys.constrained[j])
                sys.matrix.val[k] = (static_cast<std::size_t>(j) == i) ? 1.0 : 0.0;
        }
        if (ci) sys.rhs[i] = sys.constrained_values[i];
    }
}

}  // namespace afem
