#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "metastab/chain.hpp"

namespace metastab {

/// Equilibrium potential h_{A,B} with its capacity bookkeeping.
struct PotentialSolution {
    Vector h;
    std::vector<Index> source;  // A, sorted
    std::vector<Index> sink;    // B, sorted
    double capacity = 0.0;           // D(h)
    double dirichlet_value = 0.0;    // alias kept for report symmetry, = D(h)
    double capacity_definition = 0.0;  // sum_A pi lambda P[H_B < H_A^+], embedded-chain route
};

/// Throws BadSets unless A and B are nonempty, disjoint and in range.
/// Returns sorted, duplicate-free copies.
std::pair<std::vector<Index>, std::vector<Index>> validate_sets(Index state_count, std::span<const Index> a,
                                                                std::span<const Index> b);

/// h = 1 on A, 0 on B, Lh = 0 elsewhere. The capacity is computed twice
/// (Dirichlet form and escape-probability definition) and the two values
/// are required to agree within 1e-9 relative.
PotentialSolution equilibrium_potential(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                        std::span<const Index> b, const ToleranceConfig& tol = default_tolerance());

double capacity(const Chain& chain, const ProbVector& pi, std::span<const Index> a, std::span<const Index> b,
                const ToleranceConfig& tol = default_tolerance());

/// Capacity for the time-reversed chain.
double adjoint_capacity(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                        std::span<const Index> b, const ToleranceConfig& tol = default_tolerance());

/// Capacity for the symmetric part of the generator; never exceeds capacity().
double symmetric_capacity(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                          std::span<const Index> b, const ToleranceConfig& tol = default_tolerance());

// ---------------------------------------------------------------------------
// Flows

/// Symmetrized edge set: unordered pairs {x, y} (x < y) with R(x,y) + R(y,x) > 0.
class EdgeSet {
public:
    static std::shared_ptr<const EdgeSet> build(const Chain& chain, const ProbVector& pi);

    [[nodiscard]] std::size_t size() const noexcept { return tail_.size(); }
    [[nodiscard]] Index state_count() const noexcept { return static_cast<Index>(incident_.size()); }
    [[nodiscard]] Index tail(std::size_t e) const { return tail_[e]; }
    [[nodiscard]] Index head(std::size_t e) const { return head_[e]; }
    /// c(x,y) = pi(x) R(x,y) along the canonical orientation x < y.
    [[nodiscard]] double forward(std::size_t e) const { return forward_[e]; }
    /// c(y,x).
    [[nodiscard]] double backward(std::size_t e) const { return backward_[e]; }
    [[nodiscard]] double symmetric(std::size_t e) const { return 0.5 * (forward_[e] + backward_[e]); }
    /// Edge index of {x, y}, if present.
    [[nodiscard]] std::optional<std::size_t> find(Index x, Index y) const;
    /// Edges incident to x.
    [[nodiscard]] std::span<const std::size_t> incident(Index x) const {
        return incident_.at(static_cast<std::size_t>(x));
    }

private:
    std::vector<Index> tail_, head_;
    std::vector<double> forward_, backward_;
    std::vector<std::vector<std::size_t>> incident_;
};

/// Antisymmetric edge function, stored on canonical orientations.
class Flow {
public:
    explicit Flow(std::shared_ptr<const EdgeSet> edges);
    Flow(std::shared_ptr<const EdgeSet> edges, Vector canonical_values);

    [[nodiscard]] const EdgeSet& edges() const { return *edges_; }
    [[nodiscard]] const std::shared_ptr<const EdgeSet>& edge_set() const noexcept { return edges_; }
    [[nodiscard]] const Vector& values() const noexcept { return values_; }

    /// phi(x, y); zero off the edge set.
    [[nodiscard]] double at(Index x, Index y) const;
    /// Sets phi(x, y) and phi(y, x) = -value. Throws BadParams off the edge set.
    void set(Index x, Index y, double value);

    /// (div phi)(x) = sum_y phi(x, y).
    [[nodiscard]] Vector divergence() const;
    [[nodiscard]] double divergence(std::span<const Index> set) const;

    /// <phi, psi> = sum over unordered edges phi psi / c_s.
    [[nodiscard]] double dot(const Flow& other) const;
    [[nodiscard]] double norm2() const { return dot(*this); }

    Flow& operator+=(const Flow& other);
    Flow& operator-=(const Flow& other);
    Flow& operator*=(double s);

private:
    std::shared_ptr<const EdgeSet> edges_;
    Vector values_;
};

Flow operator+(Flow a, const Flow& b);
Flow operator-(Flow a, const Flow& b);
Flow operator*(double s, Flow a);

/// Phi_f(x,y) = f(x) c(x,y) - f(y) c(y,x).
Flow phi_flow(std::shared_ptr<const EdgeSet> edges, const Vector& f);
/// Phi*_f(x,y) = f(x) c(y,x) - f(y) c(x,y).
Flow phi_star_flow(std::shared_ptr<const EdgeSet> edges, const Vector& f);
/// Psi_f(x,y) = c_s(x,y) (f(x) - f(y)).
Flow psi_flow(std::shared_ptr<const EdgeSet> edges, const Vector& f);

// ---------------------------------------------------------------------------
// Variational principles

/// ||Phi_f - phi||^2 for f equal to 1 on A and 0 on B and phi divergence
/// free off A and B with zero net divergence on A and on B. Bounds the
/// capacity from above. Throws NotAdmissible naming the offending state.
double dirichlet_upper_bound(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                             std::span<const Index> b, const Vector& f, const Flow& phi,
                             const ToleranceConfig& tol = default_tolerance());

/// 1 / ||Phi_g - psi||^2 for a unit flow psi from A to B and g vanishing
/// on A and B. Bounds the capacity from below.
double thomson_lower_bound(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                           std::span<const Index> b, const Flow& psi, const Vector& g,
                           const ToleranceConfig& tol = default_tolerance());

/// Optimizers of the two principles built from h and h*.
struct DirichletOptimizer {
    Vector f;
    Flow phi;
};
struct ThomsonOptimizer {
    Flow psi;
    Vector g;
};
DirichletOptimizer dirichlet_optimizer(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                       std::span<const Index> b, const ToleranceConfig& tol = default_tolerance());
ThomsonOptimizer thomson_optimizer(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                   std::span<const Index> b, const ToleranceConfig& tol = default_tolerance());

struct FunctionBound {
    /// (sum_A pi Lf)^2 / D(f); present only when Lf vanishes off A and B.
    std::optional<double> strict;
    /// [(1-eps)(sum_A pi Lf)^2 - (1/eps)(sum_{off A,B} pi |Lf|)^2] / D(f),
    /// clipped at zero. Valid for every f.
    double relaxed = 0.0;
    double epsilon = 0.0;
};

/// Function form of the Thomson principle for reversible chains. Throws
/// NotReversible otherwise.
FunctionBound thomson_function_bound(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                     std::span<const Index> b, const Vector& f, double epsilon,
                                     const ToleranceConfig& tol = default_tolerance());

/// sup over g constant on A and on B of 2<f, Lg>_pi - D(g), for f equal to
/// 1 on A and 0 on B. Solved exactly on the quotient space where A and B
/// are single points.
double dirichlet_ii(const Chain& chain, const ProbVector& pi, std::span<const Index> a, std::span<const Index> b,
                    const Vector& f, const ToleranceConfig& tol = default_tolerance());

/// f with theta L f = g and E_pi f = 0. Throws NotZeroMean when E_pi g != 0.
Vector poisson_solve(const Chain& chain, const ProbVector& pi, const Vector& g, double theta,
                     const ToleranceConfig& tol = default_tolerance());

struct SectorEstimate {
    double ratio = 0.0;  // max of <Lf,g>^2 / (D(f) D(g)) over the samples
    double bound = 0.0;  // 2 |E|, |E| the number of states
    int samples = 0;
};

/// sup over g of <Lf,g>^2 / (D(f) D(g)) for a fixed non-constant f,
/// attained at the solution of (-L^s) g = L f.
double sector_ratio_at(const Chain& chain, const ProbVector& pi, const Vector& f,
                       const ToleranceConfig& tol = default_tolerance());

/// Randomized lower estimate of the sector constant: random Gaussian f,
/// each paired with its optimal g.
SectorEstimate sector_ratio(const Chain& chain, const ProbVector& pi, int sample_count, std::uint64_t seed,
                            const ToleranceConfig& tol = default_tolerance());

}  // namespace metastab
