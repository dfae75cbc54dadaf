#include "metastab/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <sstream>

#include "linalg.hpp"
#include "metastab/potential.hpp"

namespace metastab {

namespace {

std::vector<Index> proper_subset(std::span<const Index> f, Index n, bool allow_full) {
    auto out = normalized_subset(f, n);
    if (out.empty()) throw Error(ErrorCode::BadSubset, "subset is empty");
    if (!allow_full && static_cast<Index>(out.size()) == n) {
        throw Error(ErrorCode::BadSubset, "subset must be a proper subset of the state space");
    }
    return out;
}

std::vector<std::string> labels_of(const Chain& chain, const std::vector<Index>& states) {
    std::vector<std::string> out;
    out.reserve(states.size());
    for (Index x : states) out.push_back(chain.label(x));
    return out;
}

void require_stationary_for(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol, const char* what) {
    if (stationarity_residual(chain, pi.weights()) > tol.verify * chain.max_rate()) {
        throw Error(ErrorCode::SolverFailure, std::string(what) + ": measure is not stationary for the output");
    }
}

}  // namespace

SubChain trace_chain(const Chain& chain, const ProbVector& pi, std::span<const Index> f, const ToleranceConfig& tol) {
    const Index n = chain.size();
    const auto fs = proper_subset(f, n, true);
    if (fs.size() < 2) throw Error(ErrorCode::BadSubset, "trace needs at least two states");
    const auto m = static_cast<Index>(fs.size());
    const auto pos = detail::positions(fs, n);

    // X(z, k) = P_z[first visit to F is at fs[k]].
    const Eigen::MatrixXd x = detail::harmonic_extension(chain, fs, Eigen::MatrixXd::Identity(m, m));

    std::vector<std::vector<Transition>> out(static_cast<std::size_t>(m));
    Vector row(m);
    for (Index k = 0; k < m; ++k) {
        const Index s = fs[static_cast<std::size_t>(k)];
        row.setZero();
        for (const auto& t : chain.transitions(s)) {
            const Index p = pos[static_cast<std::size_t>(t.to)];
            if (p >= 0) {
                row(p) += t.rate;
            } else {
                row += t.rate * x.row(t.to).transpose();
            }
        }
        const double cutoff = 1e-15 * chain.holding_rate(s);
        for (Index j = 0; j < m; ++j) {
            if (j != k && row(j) > cutoff) out[static_cast<std::size_t>(k)].push_back({j, row(j)});
        }
    }
    SubChain sub{Chain::from_transitions(labels_of(chain, fs), std::move(out)), conditioned(pi, fs), fs};
    require_stationary_for(sub.chain, sub.pi, tol, "trace");
    if (is_reversible(chain, pi, tol.verify) && !is_reversible(sub.chain, sub.pi, tol.admissibility)) {
        throw Error(ErrorCode::SolverFailure, "trace of a reversible chain failed the detailed-balance check");
    }
    return sub;
}

SubChain reflected_chain(const Chain& chain, const ProbVector& pi, std::span<const Index> f,
                         const ToleranceConfig& tol) {
    const Index n = chain.size();
    const auto fs = proper_subset(f, n, true);
    const auto pos = detail::positions(fs, n);
    std::vector<std::vector<Transition>> out(fs.size());
    for (std::size_t k = 0; k < fs.size(); ++k) {
        for (const auto& t : chain.transitions(fs[k])) {
            const Index p = pos[static_cast<std::size_t>(t.to)];
            if (p >= 0) out[k].push_back({p, t.rate});
        }
    }
    std::optional<Chain> reflected;
    try {
        reflected = Chain::from_transitions(labels_of(chain, fs), std::move(out));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NotIrreducible || e.code() == ErrorCode::BadParams) {
            throw Error(ErrorCode::NotIrreducibleAfterReflection, std::string("reflected chain: ") + e.what());
        }
        throw;
    }
    ProbVector rpi = stationary(*reflected, tol);
    if (is_reversible(chain, pi, tol.verify)) {
        const ProbVector cond = conditioned(pi, fs);
        if ((cond.weights() - rpi.weights()).cwiseAbs().maxCoeff() > tol.verify ||
            !is_reversible(*reflected, cond, tol.admissibility)) {
            throw Error(ErrorCode::SolverFailure, "reflection of a reversible chain lost detailed balance");
        }
        rpi = cond;
    }
    return {std::move(*reflected), std::move(rpi), fs};
}

CollapsedChain collapse_chain(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                              const ToleranceConfig& tol) {
    const Index n = chain.size();
    const auto as = proper_subset(a, n, false);
    const auto in_a = detail::positions(as, n);

    struct {
        std::vector<Index> to_collapsed, states;
        Index collapsed = 0;
    } c;
    c.to_collapsed.assign(static_cast<std::size_t>(n), -1);
    std::vector<std::string> labels;
    for (Index x = 0; x < n; ++x) {
        if (in_a[static_cast<std::size_t>(x)] < 0) {
            c.to_collapsed[static_cast<std::size_t>(x)] = static_cast<Index>(c.states.size());
            c.states.push_back(x);
            labels.push_back(chain.label(x));
        }
    }
    c.collapsed = static_cast<Index>(c.states.size());
    for (Index x : as) c.to_collapsed[static_cast<std::size_t>(x)] = c.collapsed;
    c.states.push_back(-1);
    labels.emplace_back(kCollapsedLabel);

    const double mass = pi.mass(as);
    std::vector<std::vector<Transition>> out(c.states.size());
    std::vector<double> from_d(static_cast<std::size_t>(c.collapsed), 0.0);
    for (Index x = 0; x < n; ++x) {
        const Index cx = c.to_collapsed[static_cast<std::size_t>(x)];
        if (cx != c.collapsed) {
            double into = 0.0;
            for (const auto& t : chain.transitions(x)) {
                const Index cy = c.to_collapsed[static_cast<std::size_t>(t.to)];
                if (cy == c.collapsed) {
                    into += t.rate;
                } else {
                    out[static_cast<std::size_t>(cx)].push_back({cy, t.rate});
                }
            }
            if (into > 0.0) out[static_cast<std::size_t>(cx)].push_back({c.collapsed, into});
        } else {
            for (const auto& t : chain.transitions(x)) {
                const Index cy = c.to_collapsed[static_cast<std::size_t>(t.to)];
                if (cy != c.collapsed) from_d[static_cast<std::size_t>(cy)] += pi[x] * t.rate;
            }
        }
    }
    for (Index y = 0; y < c.collapsed; ++y) {
        if (from_d[static_cast<std::size_t>(y)] > 0.0) {
            out[static_cast<std::size_t>(c.collapsed)].push_back({y, from_d[static_cast<std::size_t>(y)] / mass});
        }
    }
    Vector w(c.collapsed + 1);
    for (Index y = 0; y < c.collapsed; ++y) w(y) = pi[c.states[static_cast<std::size_t>(y)]];
    w(c.collapsed) = mass;
    CollapsedChain result{Chain::from_transitions(std::move(labels), std::move(out)),
                          ProbVector::normalized(std::move(w)), std::move(c.to_collapsed), std::move(c.states),
                          c.collapsed};
    require_stationary_for(result.chain, result.pi, tol, "collapse");
    return result;
}

Vector lift_collapsed(const CollapsedChain& collapsed, const Vector& f) {
    Vector out(static_cast<Index>(collapsed.to_collapsed.size()));
    for (std::size_t x = 0; x < collapsed.to_collapsed.size(); ++x) {
        out(static_cast<Index>(x)) = f(collapsed.to_collapsed[x]);
    }
    return out;
}

double collapsed_quadratic_identity_check(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                          int trials, std::uint64_t seed, const ToleranceConfig& tol) {
    const auto c = collapse_chain(chain, pi, a, tol);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    const Index m = c.chain.size();
    for (int t = 0; t < trials; ++t) {
        Vector f(m), g(m);
        for (Index i = 0; i < m; ++i) {
            f(i) = u(rng);
            g(i) = u(rng);
        }
        const double lhs = inner(c.pi, apply_generator(c.chain, f), g);
        const double rhs = inner(pi, apply_generator(chain, lift_collapsed(c, f)), lift_collapsed(c, g));
        worst = std::max(worst, std::abs(lhs - rhs));
    }
    return worst;
}

EnlargedChain enlarge_chain(const Chain& chain, const ProbVector& pi, double gamma, const ToleranceConfig& tol) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw Error(ErrorCode::NonPositiveGamma, "gamma must be positive and finite");
    }
    const Index n = chain.size();
    std::vector<std::string> labels = chain.labels();
    for (Index x = 0; x < n; ++x) labels.push_back(chain.label(x) + "*");
    std::vector<std::vector<Transition>> out(static_cast<std::size_t>(2 * n));
    for (Index x = 0; x < n; ++x) {
        auto& row = out[static_cast<std::size_t>(x)];
        row.assign(chain.transitions(x).begin(), chain.transitions(x).end());
        row.push_back({x + n, 1.0 / gamma});
        out[static_cast<std::size_t>(x + n)].push_back({x, 1.0 / gamma});
    }
    Vector w(2 * n);
    w << 0.5 * pi.weights(), 0.5 * pi.weights();
    EnlargedChain e{Chain::from_transitions(std::move(labels), std::move(out)), ProbVector::normalized(std::move(w)),
                    n, gamma};
    require_stationary_for(e.chain, e.pi, tol, "enlargement");
    return e;
}

namespace {

void require_cover(const Chain& chain, const Partition& valleys, std::size_t k) {
    if (valleys.state_count() != chain.size() || !valleys.delta().empty()) {
        throw Error(ErrorCode::BadPartition, "valleys must cover the state space of the trace chain");
    }
    if (k >= valleys.valley_count()) throw Error(ErrorCode::BadPartition, "valley index out of range");
}

}  // namespace

Vector resolvent_solve(const Chain& chain, double gamma, std::size_t k, const Partition& valleys) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw Error(ErrorCode::NonPositiveGamma, "gamma must be positive and finite");
    }
    require_cover(chain, valleys, k);
    const Index n = chain.size();
    std::vector<Eigen::Triplet<double>> triplets;
    for (Index x = 0; x < n; ++x) {
        triplets.emplace_back(x, x, 1.0 + gamma * chain.holding_rate(x));
        for (const auto& t : chain.transitions(x)) triplets.emplace_back(x, t.to, -gamma * t.rate);
    }
    SparseMatrix a(n, n);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::MatrixXd rhs = indicator(n, valleys.valley(k));
    Vector u = detail::sparse_solve(a, rhs).col(0);
    for (Index x = 0; x < n; ++x) {
        if (u(x) < -1e-12 || u(x) > 1.0 + 1e-12) {
            throw Error(ErrorCode::SolverFailure, "resolvent solution left [0, 1]");
        }
        u(x) = std::clamp(u(x), 0.0, 1.0);
    }
    return u;
}

Vector enlarged_potential(const Chain& chain, const ProbVector& pi, double gamma, std::size_t k,
                          const Partition& valleys, const ToleranceConfig& tol) {
    require_cover(chain, valleys, k);
    const auto e = enlarge_chain(chain, pi, gamma, tol);
    std::vector<Index> a, b;
    for (Index x = 0; x < chain.size(); ++x) {
        (static_cast<std::size_t>(valleys.valley_of(x)) == k ? a : b).push_back(e.star(x));
    }
    if (b.empty()) return Vector::Ones(chain.size());
    const Vector h = equilibrium_potential(e.chain, e.pi, a, b, tol).h;
    return h.head(chain.size());
}

// ---------------------------------------------------------------------------
// Cycle decomposition

namespace {

struct ResidualGraph {
    // Directed conductances, indexed like the chain's transition lists.
    std::vector<std::vector<Transition>> out;    // rate field holds the residual conductance
    std::vector<std::vector<double>> original;   // initial conductance of the same edge
    std::vector<std::vector<Index>> in;          // predecessors (may contain stale entries)

    double& residual(Index x, Index y) {
        auto& row = out[static_cast<std::size_t>(x)];
        auto it = std::lower_bound(row.begin(), row.end(), y, [](const Transition& t, Index v) { return t.to < v; });
        return it->rate;
    }
    double initial(Index x, Index y) const {
        const auto& row = out[static_cast<std::size_t>(x)];
        auto it = std::lower_bound(row.begin(), row.end(), y, [](const Transition& t, Index v) { return t.to < v; });
        return original[static_cast<std::size_t>(x)][static_cast<std::size_t>(it - row.begin())];
    }
};

// Distances to s along positive residual edges, restricted to vertices >= s.
std::vector<int> distances_to(const ResidualGraph& g, Index s) {
    const auto n = g.out.size();
    std::vector<int> dist(n, -1);
    dist[static_cast<std::size_t>(s)] = 0;
    std::deque<Index> queue{s};
    while (!queue.empty()) {
        const Index y = queue.front();
        queue.pop_front();
        for (Index x : g.in[static_cast<std::size_t>(y)]) {
            if (x < s || dist[static_cast<std::size_t>(x)] >= 0) continue;
            const auto& row = g.out[static_cast<std::size_t>(x)];
            auto it = std::lower_bound(row.begin(), row.end(), y, [](const Transition& t, Index v) { return t.to < v; });
            if (it == row.end() || it->to != y || !(it->rate > 0.0)) continue;
            dist[static_cast<std::size_t>(x)] = dist[static_cast<std::size_t>(y)] + 1;
            queue.push_back(x);
        }
    }
    return dist;
}

// Length of the shortest cycle through s within vertices >= s, 0 if none.
int shortest_cycle(const ResidualGraph& g, Index s, const std::vector<int>& dist) {
    int best = 0;
    for (const auto& t : g.out[static_cast<std::size_t>(s)]) {
        if (t.to < s || !(t.rate > 0.0)) continue;
        const int d = dist[static_cast<std::size_t>(t.to)];
        if (d >= 0 && (best == 0 || d + 1 < best)) best = d + 1;
    }
    return best;
}

}  // namespace

CycleDecomposition cycle_decompose(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol) {
    if (stationarity_residual(chain, pi.weights()) > tol.verify * chain.max_rate()) {
        throw Error(ErrorCode::NotStationary, "measure is not stationary for the chain");
    }
    const Index n = chain.size();
    ResidualGraph g;
    g.out.resize(static_cast<std::size_t>(n));
    g.original.resize(static_cast<std::size_t>(n));
    g.in.resize(static_cast<std::size_t>(n));
    for (Index x = 0; x < n; ++x) {
        for (const auto& t : chain.transitions(x)) {
            const double c = pi[x] * t.rate;
            g.out[static_cast<std::size_t>(x)].push_back({t.to, c});
            g.original[static_cast<std::size_t>(x)].push_back(c);
            g.in[static_cast<std::size_t>(t.to)].push_back(x);
        }
    }
    for (auto& v : g.in) std::sort(v.begin(), v.end());

    CycleDecomposition result;
    int level = 2;
    while (level > 0) {
        int next_level = 0;
        for (Index s = 0; s < n; ++s) {
            while (true) {
                const auto dist = distances_to(g, s);
                const int len = shortest_cycle(g, s, dist);
                if (len == 0) break;
                if (len > level) {
                    if (next_level == 0 || len < next_level) next_level = len;
                    break;
                }
                // Greedy lexicographic walk: smallest successor that can
                // still close the cycle in the remaining number of steps.
                Cycle cycle;
                cycle.vertices.push_back(s);
                Index v = s;
                for (int remaining = len; remaining > 1; --remaining) {
                    Index chosen = -1;
                    for (const auto& t : g.out[static_cast<std::size_t>(v)]) {
                        if (t.to <= s || !(t.rate > 0.0)) continue;
                        if (dist[static_cast<std::size_t>(t.to)] == remaining - 1) {
                            chosen = t.to;
                            break;
                        }
                    }
                    if (chosen < 0) throw Error(ErrorCode::SolverFailure, "cycle walk lost its way");
                    cycle.vertices.push_back(chosen);
                    v = chosen;
                }
                const auto k = cycle.vertices.size();
                double m = std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < k; ++i) {
                    m = std::min(m, g.residual(cycle.vertices[i], cycle.vertices[(i + 1) % k]));
                }
                for (std::size_t i = 0; i < k; ++i) {
                    const Index a = cycle.vertices[i];
                    const Index b = cycle.vertices[(i + 1) % k];
                    double& r = g.residual(a, b);
                    r -= m;
                    if (r <= 1e-12 * g.initial(a, b)) r = 0.0;
                    cycle.rates.push_back(m / pi[a]);
                }
                cycle.conductance = m;
                result.cycles.push_back(std::move(cycle));
            }
        }
        level = next_level;
    }

    // Reconstruction and per-cycle stationarity.
    std::map<std::pair<Index, Index>, double> sum;
    for (const auto& c : result.cycles) {
        const auto k = c.vertices.size();
        for (std::size_t i = 0; i < k; ++i) {
            sum[{c.vertices[i], c.vertices[(i + 1) % k]}] += c.rates[i];
            const double dev = std::abs(pi[c.vertices[i]] * c.rates[i] - c.conductance) / c.conductance;
            result.stationarity_deviation = std::max(result.stationarity_deviation, dev);
        }
    }
    for (Index x = 0; x < n; ++x) {
        for (const auto& t : chain.transitions(x)) {
            const auto it = sum.find({x, t.to});
            const double got = it == sum.end() ? 0.0 : it->second;
            result.reconstruction_residual = std::max(result.reconstruction_residual, std::abs(got - t.rate));
            if (it != sum.end()) sum.erase(it);
        }
    }
    for (const auto& [edge, value] : sum) {
        result.reconstruction_residual = std::max(result.reconstruction_residual, std::abs(value));
    }
    return result;
}

}  // namespace metastab
