#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metastab/error.hpp"
#include "metastab/tolerance.hpp"

namespace metastab {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct Transition {
    Index to;
    double rate;
};

struct RateTriple {
    std::string from;
    std::string to;
    double rate;
};

/// Finite-state continuous-time Markov chain with strictly positive
/// off-diagonal jump rates. Construction validates the rate list and checks
/// that the positive-rate digraph is strongly connected; instances are
/// immutable afterwards.
class Chain {
public:
    /// Validates labels and triples. Throws DuplicateLabel, UnknownLabel,
    /// DuplicateEdge, NonPositiveRate, BadParams (self-loop, fewer than two
    /// states) or NotIrreducible with an unreachable pair in the message.
    static Chain build(std::vector<std::string> labels, const std::vector<RateTriple>& rates);

    /// Same validation for chains produced by the library's own
    /// constructions, which already work on dense indices.
    static Chain from_transitions(std::vector<std::string> labels,
                                  std::vector<std::vector<Transition>> out);

    [[nodiscard]] Index size() const noexcept { return static_cast<Index>(labels_.size()); }
    [[nodiscard]] const std::vector<std::string>& labels() const noexcept { return labels_; }
    [[nodiscard]] const std::string& label(Index i) const { return labels_.at(static_cast<std::size_t>(i)); }

    [[nodiscard]] std::optional<Index> find(std::string_view label) const;
    [[nodiscard]] Index index_of(std::string_view label) const;
    [[nodiscard]] std::vector<Index> indices_of(std::span<const std::string> labels) const;

    /// Outgoing transitions of state `i`, sorted by target.
    [[nodiscard]] std::span<const Transition> transitions(Index i) const {
        return out_.at(static_cast<std::size_t>(i));
    }
    [[nodiscard]] double rate(Index from, Index to) const;
    [[nodiscard]] double holding_rate(Index i) const { return holding_.at(static_cast<std::size_t>(i)); }
    [[nodiscard]] double max_rate() const noexcept { return max_rate_; }
    [[nodiscard]] std::size_t edge_count() const noexcept { return edge_count_; }

    /// Generator matrix with off-diagonal R(i,j) and diagonal -lambda(i).
    [[nodiscard]] SparseMatrix generator() const;

private:
    Chain() = default;
    void finalize();

    std::vector<std::string> labels_;
    std::unordered_map<std::string, Index> index_;
    std::vector<std::vector<Transition>> out_;
    std::vector<double> holding_;
    double max_rate_ = 0.0;
    std::size_t edge_count_ = 0;
};

/// Probability vector over the states of a chain.
class ProbVector {
public:
    /// Throws BadParams when an entry is negative (beyond -tol) or the sum
    /// is off by more than `tol`.
    static ProbVector from_weights(Vector weights, double tol = 1e-12);

    /// Normalizes nonnegative weights first.
    static ProbVector normalized(Vector weights);

    [[nodiscard]] Index size() const noexcept { return weights_.size(); }
    [[nodiscard]] const Vector& weights() const noexcept { return weights_; }
    [[nodiscard]] double operator[](Index i) const { return weights_(i); }
    [[nodiscard]] double mass(std::span<const Index> states) const;

private:
    explicit ProbVector(Vector w) : weights_(std::move(w)) {}
    Vector weights_;
};

/// Valley decomposition {E^1, ..., E^n, Delta} of the state space.
class Partition {
public:
    static Partition from_labels(const Chain& chain,
                                 const std::vector<std::vector<std::string>>& valleys,
                                 const std::optional<std::vector<std::string>>& delta = std::nullopt);

    /// Delta is the complement of the valleys.
    static Partition from_indices(Index state_count, std::vector<std::vector<Index>> valleys);

    [[nodiscard]] std::size_t valley_count() const noexcept { return valleys_.size(); }
    [[nodiscard]] std::span<const Index> valley(std::size_t j) const { return valleys_.at(j); }
    [[nodiscard]] const std::vector<std::vector<Index>>& valleys() const noexcept { return valleys_; }
    [[nodiscard]] std::span<const Index> delta() const noexcept { return delta_; }
    [[nodiscard]] Index state_count() const noexcept { return static_cast<Index>(owner_.size()); }

    /// Valley index of a state, or -1 for Delta.
    [[nodiscard]] int valley_of(Index state) const { return owner_.at(static_cast<std::size_t>(state)); }

    /// Union of all valleys, sorted.
    [[nodiscard]] std::vector<Index> valley_union() const;
    /// Union of the valleys other than j.
    [[nodiscard]] std::vector<Index> other_valleys(std::size_t j) const;
    /// Union of the valleys other than j and k.
    [[nodiscard]] std::vector<Index> other_valleys(std::size_t j, std::size_t k) const;

    /// Throws BadPartition unless there are at least two valleys.
    void require_reducible() const;

private:
    Partition() = default;
    static Partition validated(Index state_count, std::vector<std::vector<Index>> valleys,
                               std::optional<std::vector<Index>> delta);

    std::vector<std::vector<Index>> valleys_;
    std::vector<Index> delta_;
    std::vector<int> owner_;
};

/// Builds a chain from labels and rate triples (see Chain::build).
Chain build_chain(std::vector<std::string> labels, const std::vector<RateTriple>& rates);

/// Unique stationary distribution: one balance equation is replaced by the
/// normalization row and the system is solved directly up to
/// `tol.dense_guard` states; larger chains fall back to power iteration on
/// the uniformized kernel. Throws SolverFailure when the residual exceeds
/// `tol.stationarity * max_rate`.
ProbVector stationary(const Chain& chain, const ToleranceConfig& tol = default_tolerance());

/// ||pi^T L||_inf.
double stationarity_residual(const Chain& chain, const Vector& weights);

/// (Lf)(x) = sum_y R(x,y) [f(y) - f(x)].
Vector apply_generator(const Chain& chain, const Vector& f);

/// <f, g>_pi.
double inner(const ProbVector& pi, const Vector& f, const Vector& g);

/// Time-reversed chain: pi(x) R*(x,y) = pi(y) R(y,x). Throws NotStationary
/// when pi is not stationary for the chain.
Chain adjoint(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol = default_tolerance());

/// Rates (R + R*)/2; reversible with respect to pi.
Chain symmetric_part(const Chain& chain, const ProbVector& pi,
                     const ToleranceConfig& tol = default_tolerance());

/// Detailed balance pi(x) R(x,y) = pi(y) R(y,x) on every pair, relative
/// tolerance `rel_tol` on the conductances.
bool is_reversible(const Chain& chain, const ProbVector& pi, double rel_tol = 1e-12);

/// D(f) = 1/2 sum_{x,y} pi(x) R(x,y) (f(y) - f(x))^2.
double dirichlet_form(const Chain& chain, const ProbVector& pi, const Vector& f);

/// <(-L) f, g>_pi; equals D(f) when g = f.
double energy_product(const Chain& chain, const ProbVector& pi, const Vector& f, const Vector& g);

struct SpectralGap {
    double gap;
    double relaxation_time;
};

/// Smallest positive eigenvalue of -L^s in L^2(pi) by a dense symmetric
/// eigensolve. Throws TooLarge above `tol.dense_guard` states.
SpectralGap spectral_gap(const Chain& chain, const ProbVector& pi,
                         const ToleranceConfig& tol = default_tolerance());

/// Conditional measure pi(. | F) as a vector over F in the order given.
ProbVector conditioned(const ProbVector& pi, std::span<const Index> subset);

/// Sorted, duplicate-free copy; throws BadSubset on out-of-range indices.
std::vector<Index> normalized_subset(std::span<const Index> states, Index state_count);

/// Indicator vector of a subset.
Vector indicator(Index state_count, std::span<const Index> states);

}  // namespace metastab
