#pragma once

#include <optional>
#include <string>
#include <vector>

#include "metastab/chain.hpp"

namespace metastab {

/// Coarse-grained chain on the valley indices.
struct ReducedModel {
    std::size_t valley_count = 0;
    Eigen::MatrixXd rates;   // r(j,k) for j != k; zero diagonal
    Vector holding;          // lambda-bar(j) = sum_k r(j,k)
    double theta = 1.0;
    Vector valley_mass;      // pi(E^j)
    Vector capacities;       // Cap(E^j, other valleys), independent solve
    /// max_j |pi(E^j) lambda-bar(j) - theta Cap_j| / (theta Cap_j).
    double identity_residual = 0.0;
};

/// r(k,j) = (theta / pi(E^k)) sum_{E^k} pi(z) lambda(z) P_z[H_{E^j} < H^+_{other valleys}],
/// from one multi-column harmonic solve. Without theta the smallest
/// valley time scale is used. Throws BadPartition for fewer than two valleys.
ReducedModel coarse_rates(const Chain& chain, const ProbVector& pi, const Partition& partition,
                          std::optional<double> theta = std::nullopt,
                          const ToleranceConfig& tol = default_tolerance());

struct Timescales {
    Vector values;       // pi(E^j) / Cap(E^j, other valleys)
    double spread = 1.0; // max / min
};

/// pi(E^j) / Cap(E^j, other valleys) for every valley.
Timescales timescales(const Chain& chain, const ProbVector& pi, const Partition& partition,
                      const ToleranceConfig& tol = default_tolerance());

double timescale(const Chain& chain, const ProbVector& pi, const Partition& partition, std::size_t j,
                 const ToleranceConfig& tol = default_tolerance());

/// p(j,k) = P_d[H_{E^k} < H_{other valleys}] for the chain with E^j
/// collapsed into d. Entry j is zero.
Vector jump_probabilities(const Chain& chain, const ProbVector& pi, const Partition& partition, std::size_t j,
                          const ToleranceConfig& tol = default_tolerance());

/// Reversible chains only: pi(E^j) r(j,k) from
/// theta/2 {Cap_j + Cap_k - Cap(E^j u E^k, remaining valleys)}.
Eigen::MatrixXd three_capacity_flux(const Chain& chain, const ProbVector& pi, const Partition& partition,
                                    double theta, const ToleranceConfig& tol = default_tolerance());

struct ConditionReport {
    std::vector<std::string> reference_states;  // xi^j
    std::vector<double> capacity_ratio;         // max_{eta != xi^j} Cap(E^j, rest) / Cap(eta, xi^j); 0 for singletons
    std::vector<double> delta_ratio;            // pi(Delta) / pi(E^j)
    double delta_state_ratio = 0.0;             // max over valley states eta of pi(Delta) / pi(eta)
    std::vector<double> delta_rate_ratio;       // pi(Delta) / (pi(E^j) lambda-bar(j))
    std::vector<std::optional<double>> relaxation_ratio;  // t_rel(reflected E^j) / theta
    std::vector<std::optional<double>> mixing_composite;  // max_{j,k} pi(E^k)/pi(E^l) t_rel^j / theta, per l
    double theta = 1.0;
};

/// Raw ratios behind the hypotheses of the reduction theorems; no verdict.
ConditionReport check_conditions(const Chain& chain, const ProbVector& pi, const Partition& partition,
                                 const ReducedModel& model, const ToleranceConfig& tol = default_tolerance());

/// Dense generator of the reduced model (diagonal = -lambda-bar).
Eigen::MatrixXd reduced_generator(const ReducedModel& model);

/// exp(t Q) by uniformization for a small dense generator; truncation
/// error below 1e-12 per row.
Eigen::MatrixXd transition_matrix(const Eigen::MatrixXd& generator, double t);

struct Propagation {
    Vector law;       // mu exp(t Q)
    Vector integral;  // int_0^t mu exp(u Q) du
};

/// Row-vector propagation mu exp(t Q) through sparse uniformization, with
/// the time integral of the law along the way.
Propagation propagate(const Chain& chain, const Vector& mu, double t);

}  // namespace metastab
