#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metastab/chain.hpp"

namespace metastab {

/// Label of the collapsed state.
inline constexpr const char* kCollapsedLabel = "@collapsed";

/// A chain living on a subset of another chain's states.
struct SubChain {
    Chain chain;
    ProbVector pi;
    std::vector<Index> states;  // original index of each new state
};

/// Trace on F: R_F(x,y) = lambda(x) P_x[H_F^+ = H_y], from one absorption
/// solve with F absorbing. The returned measure is pi conditioned to F,
/// verified stationary for the trace. Throws BadSubset when F is empty.
SubChain trace_chain(const Chain& chain, const ProbVector& pi, std::span<const Index> f,
                     const ToleranceConfig& tol = default_tolerance());

/// Restriction of the rates to F x F. The measure is the stationary law of
/// the reflected chain itself; for reversible inputs it equals pi(.|F) and
/// this is checked. Throws NotIrreducibleAfterReflection.
SubChain reflected_chain(const Chain& chain, const ProbVector& pi, std::span<const Index> f,
                         const ToleranceConfig& tol = default_tolerance());

struct CollapsedChain {
    Chain chain;
    ProbVector pi;
    std::vector<Index> to_collapsed;  // original index -> collapsed index
    std::vector<Index> states;        // collapsed index -> original index (-1 for the collapsed state)
    Index collapsed = 0;              // index of the collapsed state (always last)
};

/// Collapses A into one state: rates into it are summed, rates out of it
/// are pi-averaged over A. Throws BadSubset unless A is nonempty and proper.
CollapsedChain collapse_chain(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                              const ToleranceConfig& tol = default_tolerance());

/// Lift of a function on the collapsed space: constant on A.
Vector lift_collapsed(const CollapsedChain& collapsed, const Vector& f);

/// max over random (f, g) of |<L^C f, g>_{pi^C} - <L F, G>_pi| with F, G the lifts.
double collapsed_quadratic_identity_check(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                          int trials, std::uint64_t seed,
                                          const ToleranceConfig& tol = default_tolerance());

struct EnlargedChain {
    Chain chain;          // states 0..n-1 are the base, n..2n-1 their star copies
    ProbVector pi;        // pi/2 on both copies
    Index base_size = 0;
    double gamma = 0.0;

    [[nodiscard]] Index star(Index x) const { return x + base_size; }
};

/// gamma-enlargement: every state gets a star copy, joined to it at rate
/// 1/gamma in both directions. Throws NonPositiveGamma.
EnlargedChain enlarge_chain(const Chain& chain, const ProbVector& pi, double gamma,
                            const ToleranceConfig& tol = default_tolerance());

/// Solution of (I - gamma L) u = chi_{E^k}. The valleys must cover the
/// state space of `chain`.
Vector resolvent_solve(const Chain& chain, double gamma, std::size_t k, const Partition& valleys);

/// Equilibrium potential of the enlarged chain between the stars of valley
/// k and the other stars, restricted to the base states. Equals
/// resolvent_solve.
Vector enlarged_potential(const Chain& chain, const ProbVector& pi, double gamma, std::size_t k,
                          const Partition& valleys, const ToleranceConfig& tol = default_tolerance());

struct Cycle {
    std::vector<Index> vertices;  // eta_0, ..., eta_{k-1}; closes back to eta_0
    std::vector<double> rates;    // rate of eta_i -> eta_{i+1}
    double conductance = 0.0;     // pi(eta_i) * rates[i], constant along the cycle
};

struct CycleDecomposition {
    std::vector<Cycle> cycles;
    double reconstruction_residual = 0.0;  // max over edges of |sum of cycle rates - R|
    double stationarity_deviation = 0.0;   // max over cycles of |pi(eta_i) r_i - conductance| / conductance
};

/// Decomposition of L into pi-stationary cycle generators: repeatedly
/// removes the shortest cycle of the residual conductance graph (smallest
/// vertex sequence first) at its minimal conductance. Throws NotStationary.
CycleDecomposition cycle_decompose(const Chain& chain, const ProbVector& pi,
                                   const ToleranceConfig& tol = default_tolerance());

}  // namespace metastab
