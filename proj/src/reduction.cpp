#include "metastab/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "linalg.hpp"
#include "metastab/potential.hpp"
#include "metastab/transforms.hpp"

namespace metastab {

namespace {

// Columns j = equilibrium potential of E^j against the other valleys.
Eigen::MatrixXd valley_potentials(const Chain& chain, const Partition& partition) {
    const auto boundary = partition.valley_union();
    const auto n = static_cast<Index>(partition.valley_count());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(static_cast<Index>(boundary.size()), n);
    for (std::size_t b = 0; b < boundary.size(); ++b) {
        values(static_cast<Index>(b), partition.valley_of(boundary[b])) = 1.0;
    }
    return detail::harmonic_extension(chain, boundary, values);
}

void require_partition(const Chain& chain, const Partition& partition) {
    if (partition.state_count() != chain.size()) {
        throw Error(ErrorCode::BadPartition, "partition does not match the chain");
    }
    partition.require_reducible();
}

std::vector<double> valley_capacities(const Chain& chain, const ProbVector& pi, const Partition& partition,
                                      const ToleranceConfig& tol) {
    std::vector<double> caps;
    for (std::size_t j = 0; j < partition.valley_count(); ++j) {
        caps.push_back(capacity(chain, pi, partition.valley(j), partition.other_valleys(j), tol));
    }
    return caps;
}

}  // namespace

Timescales timescales(const Chain& chain, const ProbVector& pi, const Partition& partition,
                      const ToleranceConfig& tol) {
    require_partition(chain, partition);
    const auto caps = valley_capacities(chain, pi, partition, tol);
    Timescales ts;
    ts.values.resize(static_cast<Index>(caps.size()));
    for (std::size_t j = 0; j < caps.size(); ++j) {
        ts.values(static_cast<Index>(j)) = pi.mass(partition.valley(j)) / caps[j];
    }
    ts.spread = ts.values.maxCoeff() / ts.values.minCoeff();
    return ts;
}

double timescale(const Chain& chain, const ProbVector& pi, const Partition& partition, std::size_t j,
                 const ToleranceConfig& tol) {
    require_partition(chain, partition);
    if (j >= partition.valley_count()) throw Error(ErrorCode::BadPartition, "valley index out of range");
    return pi.mass(partition.valley(j)) / capacity(chain, pi, partition.valley(j), partition.other_valleys(j), tol);
}

ReducedModel coarse_rates(const Chain& chain, const ProbVector& pi, const Partition& partition,
                          std::optional<double> theta, const ToleranceConfig& tol) {
    require_partition(chain, partition);
    const std::size_t n = partition.valley_count();
    const auto caps = valley_capacities(chain, pi, partition, tol);

    ReducedModel model;
    model.valley_count = n;
    model.valley_mass.resize(static_cast<Index>(n));
    model.capacities.resize(static_cast<Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        model.valley_mass(static_cast<Index>(j)) = pi.mass(partition.valley(j));
        model.capacities(static_cast<Index>(j)) = caps[j];
    }
    if (theta) {
        if (!(*theta > 0.0) || !std::isfinite(*theta)) throw Error(ErrorCode::BadParams, "theta must be positive");
        model.theta = *theta;
    } else {
        model.theta = (model.valley_mass.array() / model.capacities.array()).minCoeff();
    }

    const Eigen::MatrixXd h = valley_potentials(chain, partition);
    model.rates = Eigen::MatrixXd::Zero(static_cast<Index>(n), static_cast<Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
        for (Index z : partition.valley(k)) {
            for (const auto& t : chain.transitions(z)) {
                // (L h_j)(z) = sum_y R(z,y) h_j(y) for z outside E^j, where h_j(z) = 0.
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == k) continue;
                    model.rates(static_cast<Index>(k), static_cast<Index>(j)) +=
                        pi[z] * t.rate * h(t.to, static_cast<Index>(j));
                }
            }
        }
        model.rates.row(static_cast<Index>(k)) *= model.theta / model.valley_mass(static_cast<Index>(k));
    }
    model.holding = model.rates.rowwise().sum();
    for (std::size_t j = 0; j < n; ++j) {
        const double lhs = model.valley_mass(static_cast<Index>(j)) * model.holding(static_cast<Index>(j));
        const double rhs = model.theta * caps[j];
        model.identity_residual = std::max(model.identity_residual, std::abs(lhs - rhs) / rhs);
    }
    if (model.identity_residual > tol.admissibility) {
        std::ostringstream msg;
        msg << "time-scale identity violated: relative residual " << model.identity_residual;
        throw Error(ErrorCode::SolverFailure, msg.str());
    }
    return model;
}

Vector jump_probabilities(const Chain& chain, const ProbVector& pi, const Partition& partition, std::size_t j,
                          const ToleranceConfig& tol) {
    require_partition(chain, partition);
    const std::size_t n = partition.valley_count();
    if (j >= n) throw Error(ErrorCode::BadPartition, "valley index out of range");
    const auto col = collapse_chain(chain, pi, partition.valley(j), tol);

    std::vector<Index> boundary;
    for (Index x : partition.other_valleys(j)) boundary.push_back(col.to_collapsed[static_cast<std::size_t>(x)]);
    std::sort(boundary.begin(), boundary.end());
    Eigen::MatrixXd values = Eigen::MatrixXd::Zero(static_cast<Index>(boundary.size()), static_cast<Index>(n));
    for (std::size_t b = 0; b < boundary.size(); ++b) {
        const Index original = col.states[static_cast<std::size_t>(boundary[b])];
        values(static_cast<Index>(b), partition.valley_of(original)) = 1.0;
    }
    const Eigen::MatrixXd u = detail::harmonic_extension(col.chain, boundary, values);
    Vector p = u.row(col.collapsed).transpose();
    p(static_cast<Index>(j)) = 0.0;
    if (std::abs(p.sum() - 1.0) > tol.verify) {
        throw Error(ErrorCode::SolverFailure, "jump probabilities do not sum to one");
    }
    return p;
}

Eigen::MatrixXd three_capacity_flux(const Chain& chain, const ProbVector& pi, const Partition& partition,
                                    double theta, const ToleranceConfig& tol) {
    require_partition(chain, partition);
    if (!is_reversible(chain, pi, tol.verify)) {
        throw Error(ErrorCode::NotReversible, "the three-capacity formula needs a reversible chain");
    }
    const std::size_t n = partition.valley_count();
    const auto caps = valley_capacities(chain, pi, partition, tol);
    Eigen::MatrixXd flux = Eigen::MatrixXd::Zero(static_cast<Index>(n), static_cast<Index>(n));
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = j + 1; k < n; ++k) {
            std::vector<Index> joint(partition.valley(j).begin(), partition.valley(j).end());
            joint.insert(joint.end(), partition.valley(k).begin(), partition.valley(k).end());
            const auto rest = partition.other_valleys(j, k);
            const double cap_jk = rest.empty() ? 0.0 : capacity(chain, pi, joint, rest, tol);
            const double v = 0.5 * theta * (caps[j] + caps[k] - cap_jk);
            flux(static_cast<Index>(j), static_cast<Index>(k)) = v;
            flux(static_cast<Index>(k), static_cast<Index>(j)) = v;
        }
    }
    return flux;
}

// ---------------------------------------------------------------------------
// Conditions

ConditionReport check_conditions(const Chain& chain, const ProbVector& pi, const Partition& partition,
                                 const ReducedModel& model, const ToleranceConfig& tol) {
    require_partition(chain, partition);
    const std::size_t n = partition.valley_count();
    ConditionReport rep;
    rep.theta = model.theta;
    const double delta_mass = pi.mass(partition.delta());

    std::vector<std::optional<double>> trel(n);
    for (std::size_t j = 0; j < n; ++j) {
        const auto valley = partition.valley(j);
        Index ref = valley[0];
        for (Index x : valley) {
            if (pi[x] > pi[ref] || (pi[x] == pi[ref] && chain.label(x) < chain.label(ref))) ref = x;
        }
        rep.reference_states.push_back(chain.label(ref));
        const double cap_j = model.capacities(static_cast<Index>(j));
        double worst = 0.0;
        for (Index x : valley) {
            if (x == ref) continue;
            const Index a[] = {x};
            const Index b[] = {ref};
            worst = std::max(worst, cap_j / capacity(chain, pi, a, b, tol));
        }
        rep.capacity_ratio.push_back(worst);

        const double mass = model.valley_mass(static_cast<Index>(j));
        rep.delta_ratio.push_back(delta_mass / mass);
        rep.delta_rate_ratio.push_back(delta_mass / (mass * model.holding(static_cast<Index>(j))));
        for (Index x : valley) rep.delta_state_ratio = std::max(rep.delta_state_ratio, delta_mass / pi[x]);

        if (valley.size() == 1) {
            trel[j] = 0.0;
        } else {
            try {
                const auto reflected = reflected_chain(chain, pi, valley, tol);
                trel[j] = spectral_gap(reflected.chain, reflected.pi, tol).relaxation_time;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::NotIrreducibleAfterReflection && e.code() != ErrorCode::TooLarge) throw;
            }
        }
        rep.relaxation_ratio.push_back(trel[j] ? std::optional<double>(*trel[j] / model.theta) : std::nullopt);
    }
    const bool all = std::all_of(trel.begin(), trel.end(), [](const auto& v) { return v.has_value(); });
    for (std::size_t l = 0; l < n; ++l) {
        if (!all) {
            rep.mixing_composite.emplace_back(std::nullopt);
            continue;
        }
        double worst = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t k = 0; k < n; ++k) {
                const double v = model.valley_mass(static_cast<Index>(k)) / model.valley_mass(static_cast<Index>(l)) *
                                 *trel[j] / model.theta;
                worst = std::max(worst, v);
            }
        }
        rep.mixing_composite.emplace_back(worst);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Semigroups

Eigen::MatrixXd reduced_generator(const ReducedModel& model) {
    Eigen::MatrixXd q = model.rates;
    q.diagonal().setZero();
    q.diagonal() = -q.rowwise().sum();
    return q;
}

namespace {

constexpr double kStepMass = 20.0;   // Lambda * step length
constexpr double kTailMass = 1e-15;  // Poisson tail dropped per step

// Poisson(a) weights until the remaining tail is below kTailMass.
std::vector<double> poisson_weights(double a) {
    std::vector<double> w;
    double term = std::exp(-a);
    double cum = 0.0;
    for (int k = 0; k < 10000; ++k) {
        if (k > 0) term *= a / k;
        w.push_back(term);
        cum += term;
        if (1.0 - cum <= kTailMass && k >= a) break;
    }
    return w;
}

}  // namespace

Eigen::MatrixXd transition_matrix(const Eigen::MatrixXd& generator, double t) {
    const Index n = generator.rows();
    if (t < 0.0) throw Error(ErrorCode::BadParams, "time must be nonnegative");
    const double lambda = (-generator.diagonal()).maxCoeff();
    if (t == 0.0 || !(lambda > 0.0)) return Eigen::MatrixXd::Identity(n, n);
    auto steps = static_cast<long>(std::ceil(lambda * t / kStepMass));
    steps = std::max(1L, steps);
    const double tau = t / static_cast<double>(steps);
    const Eigen::MatrixXd p = Eigen::MatrixXd::Identity(n, n) + generator / lambda;
    const auto w = poisson_weights(lambda * tau);
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd step = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t k = 0; k < w.size(); ++k) {
        step += w[k] * power;
        power = power * p;
    }
    // step^steps by repeated squaring.
    Eigen::MatrixXd result = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd base = step;
    for (long e = steps; e > 0; e >>= 1) {
        if (e & 1) result = result * base;
        if (e > 1) base = base * base;
    }
    // Renormalize the dropped tail mass.
    for (Index i = 0; i < n; ++i) result.row(i) /= result.row(i).sum();
    return result;
}

Propagation propagate(const Chain& chain, const Vector& mu, double t) {
    if (t < 0.0) throw Error(ErrorCode::BadParams, "time must be nonnegative");
    const Index n = chain.size();
    double lambda = 0.0;
    for (Index x = 0; x < n; ++x) lambda = std::max(lambda, chain.holding_rate(x));
    Propagation out{mu, Vector::Zero(n)};
    if (t == 0.0) return out;
    const long steps = std::max(1L, static_cast<long>(std::ceil(lambda * t / kStepMass)));
    const double tau = t / static_cast<double>(steps);
    const auto w = poisson_weights(lambda * tau);

    auto apply_p = [&](const Vector& v) {
        Vector next(n);
        for (Index y = 0; y < n; ++y) next(y) = v(y) * (1.0 - chain.holding_rate(y) / lambda);
        for (Index x = 0; x < n; ++x) {
            const double vx = v(x) / lambda;
            if (vx == 0.0) continue;
            for (const auto& e : chain.transitions(x)) next(e.to) += vx * e.rate;
        }
        return next;
    };

    for (long s = 0; s < steps; ++s) {
        Vector power = out.law;
        Vector law = Vector::Zero(n);
        double cum = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            cum += w[k];
            law += w[k] * power;
            // int_0^tau e^{-L u}(L u)^k/k! du = P[Poisson(L tau) >= k+1] / L
            out.integral += (std::max(0.0, 1.0 - cum) / lambda) * power;
            power = apply_p(power);
        }
        out.law = law / law.sum() * out.law.sum();
    }
    return out;
}

}  // namespace metastab
