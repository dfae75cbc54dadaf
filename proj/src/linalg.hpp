#pragma once

// Internal sparse linear-algebra helpers shared by the modules.

#include <span>
#include <vector>

#include "metastab/chain.hpp"

namespace metastab::detail {

/// Solves A X = B with a sparse LU factorization.
Eigen::MatrixXd sparse_solve(const SparseMatrix& a, const Eigen::MatrixXd& b);

/// Rows/columns of `m` restricted to the given index lists.
SparseMatrix submatrix(const SparseMatrix& m, std::span<const Index> rows, std::span<const Index> cols);

/// Complement of a sorted subset of {0, ..., n-1}.
std::vector<Index> complement(std::span<const Index> sorted, Index n);

/// Position of every state inside `subset`, -1 when absent.
std::vector<Index> positions(std::span<const Index> subset, Index n);

/// Harmonic extension: returns the n x k matrix U with U = `boundary_values`
/// on `boundary` (rows in the order of `boundary`) and (L U)(x) = 0 for every
/// x outside the boundary. `boundary` must be sorted and nonempty.
Eigen::MatrixXd harmonic_extension(const Chain& chain, std::span<const Index> boundary,
                                   const Eigen::MatrixXd& boundary_values);

/// Same problem for the embedded jump chain p(x,y) = R(x,y)/lambda(x),
/// solved as (I - P_II) u = P_IB v. Agrees with harmonic_extension in exact
/// arithmetic; kept as an independent route for cross-checks.
Eigen::MatrixXd harmonic_extension_embedded(const Chain& chain, std::span<const Index> boundary,
                                            const Eigen::MatrixXd& boundary_values);

}  // namespace metastab::detail
