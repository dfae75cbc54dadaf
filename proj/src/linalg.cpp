#include "linalg.hpp"

#include <Eigen/SparseLU>

#include <algorithm>

namespace metastab::detail {

Eigen::MatrixXd sparse_solve(const SparseMatrix& a, const Eigen::MatrixXd& b) {
    if (a.rows() == 0) {
        return Eigen::MatrixXd(0, b.cols());
    }
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
    lu.analyzePattern(a);
    lu.factorize(a);
    if (lu.info() != Eigen::Success) {
        throw Error(ErrorCode::SolverFailure, "sparse LU factorization failed: " + lu.lastErrorMessage());
    }
    Eigen::MatrixXd x = lu.solve(b);
    if (lu.info() != Eigen::Success || !x.allFinite()) {
        throw Error(ErrorCode::SolverFailure, "sparse LU solve failed");
    }
    // One step of iterative refinement; residuals of the downstream
    // identities are checked at 1e-10 and better.
    const Eigen::MatrixXd r = b - a * x;
    x += lu.solve(r);
    return x;
}

SparseMatrix submatrix(const SparseMatrix& m, std::span<const Index> rows, std::span<const Index> cols) {
    const auto row_pos = positions(rows, m.rows());
    const auto col_pos = positions(cols, m.cols());
    std::vector<Eigen::Triplet<double>> triplets;
    for (Index c = 0; c < m.outerSize(); ++c) {
        const Index cc = col_pos[static_cast<std::size_t>(c)];
        if (cc < 0) continue;
        for (SparseMatrix::InnerIterator it(m, c); it; ++it) {
            const Index rr = row_pos[static_cast<std::size_t>(it.row())];
            if (rr >= 0) triplets.emplace_back(rr, cc, it.value());
        }
    }
    SparseMatrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
    out.setFromTriplets(triplets.begin(), triplets.end());
    return out;
}

std::vector<Index> complement(std::span<const Index> sorted, Index n) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(n) - sorted.size());
    std::size_t k = 0;
    for (Index i = 0; i < n; ++i) {
        if (k < sorted.size() && sorted[k] == i) {
            ++k;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

std::vector<Index> positions(std::span<const Index> subset, Index n) {
    std::vector<Index> pos(static_cast<std::size_t>(n), -1);
    for (std::size_t k = 0; k < subset.size(); ++k) {
        pos[static_cast<std::size_t>(subset[k])] = static_cast<Index>(k);
    }
    return pos;
}

namespace {

// Shared skeleton: interior rows of (scale * Q) u = 0 with boundary values
// moved to the right-hand side.
template <class RowFn>
Eigen::MatrixXd extend(const Chain& chain, std::span<const Index> boundary,
                       const Eigen::MatrixXd& boundary_values, RowFn&& row_scale) {
    const Index n = chain.size();
    const Index k = boundary_values.cols();
    const auto interior = complement(boundary, n);
    const auto bpos = positions(boundary, n);
    const auto ipos = positions(interior, n);

    Eigen::MatrixXd out(n, k);
    for (std::size_t b = 0; b < boundary.size(); ++b) {
        out.row(boundary[b]) = boundary_values.row(static_cast<Index>(b));
    }
    if (interior.empty()) return out;

    const auto m = static_cast<Index>(interior.size());
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, k);
    for (Index r = 0; r < m; ++r) {
        const Index x = interior[static_cast<std::size_t>(r)];
        const double scale = row_scale(x);
        // Embedded form has unit diagonal; generator form has -lambda.
        triplets.emplace_back(r, r, -chain.holding_rate(x) * scale);
        for (const auto& t : chain.transitions(x)) {
            const double w = t.rate * scale;
            const Index ip = ipos[static_cast<std::size_t>(t.to)];
            if (ip >= 0) {
                triplets.emplace_back(r, ip, w);
            } else {
                rhs.row(r) -= w * boundary_values.row(bpos[static_cast<std::size_t>(t.to)]);
            }
        }
    }
    SparseMatrix a(m, m);
    a.setFromTriplets(triplets.begin(), triplets.end());
    const Eigen::MatrixXd sol = sparse_solve(a, rhs);
    for (Index r = 0; r < m; ++r) {
        out.row(interior[static_cast<std::size_t>(r)]) = sol.row(r);
    }
    return out;
}

}  // namespace

Eigen::MatrixXd harmonic_extension(const Chain& chain, std::span<const Index> boundary,
                                   const Eigen::MatrixXd& boundary_values) {
    return extend(chain, boundary, boundary_values, [](Index) { return 1.0; });
}

Eigen::MatrixXd harmonic_extension_embedded(const Chain& chain, std::span<const Index> boundary,
                                            const Eigen::MatrixXd& boundary_values) {
    return extend(chain, boundary, boundary_values,
                  [&chain](Index x) { return 1.0 / chain.holding_rate(x); });
}

}  // namespace metastab::detail
