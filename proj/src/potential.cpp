#include "metastab/potential.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "linalg.hpp"

namespace metastab {

std::pair<std::vector<Index>, std::vector<Index>> validate_sets(Index state_count, std::span<const Index> a,
                                                                std::span<const Index> b) {
    auto check = [state_count](std::span<const Index> s, const char* name) {
        std::vector<Index> out(s.begin(), s.end());
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        if (out.empty()) throw Error(ErrorCode::BadSets, std::string("set ") + name + " is empty");
        if (out.front() < 0 || out.back() >= state_count) {
            throw Error(ErrorCode::BadSets, std::string("set ") + name + " has an out-of-range state");
        }
        return out;
    };
    auto sa = check(a, "A");
    auto sb = check(b, "B");
    std::vector<Index> common;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(common));
    if (!common.empty()) throw Error(ErrorCode::BadSets, "sets A and B overlap");
    return {std::move(sa), std::move(sb)};
}

namespace {

std::pair<std::vector<Index>, Eigen::MatrixXd> boundary_of(const std::vector<Index>& a, const std::vector<Index>& b) {
    std::vector<Index> boundary;
    boundary.reserve(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(boundary));
    Eigen::MatrixXd values(static_cast<Index>(boundary.size()), 1);
    for (std::size_t k = 0; k < boundary.size(); ++k) {
        values(static_cast<Index>(k), 0) = std::binary_search(a.begin(), a.end(), boundary[k]) ? 1.0 : 0.0;
    }
    return {std::move(boundary), std::move(values)};
}

bool close_rel(double x, double y, double rel) {
    return std::abs(x - y) <= rel * std::max({std::abs(x), std::abs(y), 1e-300});
}

}  // namespace

PotentialSolution equilibrium_potential(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                        std::span<const Index> b, const ToleranceConfig& tol) {
    auto [sa, sb] = validate_sets(chain.size(), a, b);
    const auto [boundary, values] = boundary_of(sa, sb);

    PotentialSolution sol;
    sol.h = detail::harmonic_extension(chain, boundary, values).col(0);
    sol.capacity = dirichlet_form(chain, pi, sol.h);
    sol.dirichlet_value = sol.capacity;

    const Vector he = detail::harmonic_extension_embedded(chain, boundary, values).col(0);
    double cap = 0.0;
    for (Index x : sa) {
        double escape = 0.0;
        for (const auto& t : chain.transitions(x)) escape += t.rate * (1.0 - he(t.to));
        cap += pi[x] * escape;
    }
    sol.capacity_definition = cap;
    if (!close_rel(sol.capacity, cap, 1e-9)) {
        std::ostringstream msg;
        msg << "capacity routes disagree: D(h) = " << sol.capacity << ", definition = " << cap;
        throw Error(ErrorCode::SolverFailure, msg.str());
    }
    const Vector lh = apply_generator(chain, sol.h);
    for (Index x = 0; x < chain.size(); ++x) {
        if (std::binary_search(boundary.begin(), boundary.end(), x)) continue;
        if (std::abs(lh(x)) > tol.verify * chain.max_rate()) {
            throw Error(ErrorCode::SolverFailure, "equilibrium potential is not harmonic at " + chain.label(x));
        }
    }
    sol.source = std::move(sa);
    sol.sink = std::move(sb);
    return sol;
}

double capacity(const Chain& chain, const ProbVector& pi, std::span<const Index> a, std::span<const Index> b,
                const ToleranceConfig& tol) {
    return equilibrium_potential(chain, pi, a, b, tol).capacity;
}

double adjoint_capacity(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                        std::span<const Index> b, const ToleranceConfig& tol) {
    return capacity(adjoint(chain, pi, tol), pi, a, b, tol);
}

double symmetric_capacity(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                          std::span<const Index> b, const ToleranceConfig& tol) {
    return capacity(symmetric_part(chain, pi, tol), pi, a, b, tol);
}

// ---------------------------------------------------------------------------
// EdgeSet / Flow

std::shared_ptr<const EdgeSet> EdgeSet::build(const Chain& chain, const ProbVector& pi) {
    auto es = std::make_shared<EdgeSet>();
    es->incident_.assign(static_cast<std::size_t>(chain.size()), {});
    for (Index x = 0; x < chain.size(); ++x) {
        for (const auto& t : chain.transitions(x)) {
            const Index y = t.to;
            if (x < y) {
                es->tail_.push_back(x);
                es->head_.push_back(y);
                es->forward_.push_back(pi[x] * t.rate);
                es->backward_.push_back(pi[y] * chain.rate(y, x));
            } else if (chain.rate(y, x) == 0.0) {
                es->tail_.push_back(y);
                es->head_.push_back(x);
                es->forward_.push_back(0.0);
                es->backward_.push_back(pi[x] * t.rate);
            }
        }
    }
    // Canonical order: by (tail, head).
    std::vector<std::size_t> order(es->tail_.size());
    for (std::size_t e = 0; e < order.size(); ++e) order[e] = e;
    std::sort(order.begin(), order.end(), [&](std::size_t p, std::size_t q) {
        return std::pair(es->tail_[p], es->head_[p]) < std::pair(es->tail_[q], es->head_[q]);
    });
    auto permute = [&order](auto& v) {
        auto copy = v;
        for (std::size_t e = 0; e < order.size(); ++e) v[e] = copy[order[e]];
    };
    permute(es->tail_);
    permute(es->head_);
    permute(es->forward_);
    permute(es->backward_);
    for (std::size_t e = 0; e < es->tail_.size(); ++e) {
        es->incident_[static_cast<std::size_t>(es->tail_[e])].push_back(e);
        es->incident_[static_cast<std::size_t>(es->head_[e])].push_back(e);
    }
    return es;
}

std::optional<std::size_t> EdgeSet::find(Index x, Index y) const {
    if (x > y) std::swap(x, y);
    for (std::size_t e : incident(x)) {
        if (tail_[e] == x && head_[e] == y) return e;
    }
    return std::nullopt;
}

Flow::Flow(std::shared_ptr<const EdgeSet> edges)
    : edges_(std::move(edges)), values_(Vector::Zero(static_cast<Index>(edges_->size()))) {}

Flow::Flow(std::shared_ptr<const EdgeSet> edges, Vector canonical_values)
    : edges_(std::move(edges)), values_(std::move(canonical_values)) {
    if (values_.size() != static_cast<Index>(edges_->size())) {
        throw Error(ErrorCode::BadParams, "flow values do not match the edge set");
    }
}

double Flow::at(Index x, Index y) const {
    const auto e = edges_->find(x, y);
    if (!e) return 0.0;
    const double v = values_(static_cast<Index>(*e));
    return x < y ? v : -v;
}

void Flow::set(Index x, Index y, double value) {
    const auto e = edges_->find(x, y);
    if (!e) throw Error(ErrorCode::BadParams, "flow assigned off the edge set");
    values_(static_cast<Index>(*e)) = x < y ? value : -value;
}

Vector Flow::divergence() const {
    Vector div = Vector::Zero(edges_->state_count());
    for (std::size_t e = 0; e < edges_->size(); ++e) {
        const double v = values_(static_cast<Index>(e));
        div(edges_->tail(e)) += v;
        div(edges_->head(e)) -= v;
    }
    return div;
}

double Flow::divergence(std::span<const Index> set) const {
    const Vector div = divergence();
    double total = 0.0;
    for (Index x : set) total += div(x);
    return total;
}

namespace {

void require_same_edges(const Flow& a, const Flow& b) {
    if (a.edge_set() == b.edge_set()) return;
    const EdgeSet& x = a.edges();
    const EdgeSet& y = b.edges();
    bool same = x.size() == y.size() && x.state_count() == y.state_count();
    for (std::size_t e = 0; same && e < x.size(); ++e) same = x.tail(e) == y.tail(e) && x.head(e) == y.head(e);
    if (!same) throw Error(ErrorCode::BadParams, "flows live on different edge sets");
}

}  // namespace

double Flow::dot(const Flow& other) const {
    require_same_edges(*this, other);
    double acc = 0.0;
    for (std::size_t e = 0; e < edges_->size(); ++e) {
        acc += values_(static_cast<Index>(e)) * other.values_(static_cast<Index>(e)) / edges_->symmetric(e);
    }
    return acc;
}

Flow& Flow::operator+=(const Flow& other) {
    require_same_edges(*this, other);
    values_ += other.values_;
    return *this;
}

Flow& Flow::operator-=(const Flow& other) {
    require_same_edges(*this, other);
    values_ -= other.values_;
    return *this;
}

Flow& Flow::operator*=(double s) {
    values_ *= s;
    return *this;
}

Flow operator+(Flow a, const Flow& b) { return a += b; }
Flow operator-(Flow a, const Flow& b) { return a -= b; }
Flow operator*(double s, Flow a) { return a *= s; }

namespace {

template <class Fn>
Flow make_flow(std::shared_ptr<const EdgeSet> edges, Fn&& fn) {
    Vector v(static_cast<Index>(edges->size()));
    for (std::size_t e = 0; e < edges->size(); ++e) v(static_cast<Index>(e)) = fn(*edges, e);
    return Flow(std::move(edges), std::move(v));
}

}  // namespace

Flow phi_flow(std::shared_ptr<const EdgeSet> edges, const Vector& f) {
    return make_flow(std::move(edges), [&f](const EdgeSet& es, std::size_t e) {
        return f(es.tail(e)) * es.forward(e) - f(es.head(e)) * es.backward(e);
    });
}

Flow phi_star_flow(std::shared_ptr<const EdgeSet> edges, const Vector& f) {
    return make_flow(std::move(edges), [&f](const EdgeSet& es, std::size_t e) {
        return f(es.tail(e)) * es.backward(e) - f(es.head(e)) * es.forward(e);
    });
}

Flow psi_flow(std::shared_ptr<const EdgeSet> edges, const Vector& f) {
    return make_flow(std::move(edges), [&f](const EdgeSet& es, std::size_t e) {
        return es.symmetric(e) * (f(es.tail(e)) - f(es.head(e)));
    });
}

// ---------------------------------------------------------------------------
// Variational principles

namespace {

void require_boundary_values(const Chain& chain, const std::vector<Index>& set, const Vector& f, double value,
                             double slack, const char* what) {
    for (Index x : set) {
        if (std::abs(f(x) - value) > slack) {
            std::ostringstream msg;
            msg << what << " must equal " << value << " at '" << chain.label(x) << "' (got " << f(x) << ")";
            throw Error(ErrorCode::NotAdmissible, msg.str());
        }
    }
}

void require_divergence(const Chain& chain, const Flow& flow, const std::vector<Index>& a,
                        const std::vector<Index>& b, double strength, double slack) {
    const Vector div = flow.divergence();
    double on_a = 0.0, on_b = 0.0;
    for (Index x = 0; x < chain.size(); ++x) {
        const bool in_a = std::binary_search(a.begin(), a.end(), x);
        const bool in_b = std::binary_search(b.begin(), b.end(), x);
        if (in_a) {
            on_a += div(x);
        } else if (in_b) {
            on_b += div(x);
        } else if (std::abs(div(x)) > slack) {
            std::ostringstream msg;
            msg << "flow is not divergence free at '" << chain.label(x) << "' (divergence " << div(x) << ")";
            throw Error(ErrorCode::NotAdmissible, msg.str());
        }
    }
    if (std::abs(on_a - strength) > slack || std::abs(on_b + strength) > slack) {
        std::ostringstream msg;
        msg << "flow has divergence " << on_a << " on A and " << on_b << " on B; expected " << strength << " and "
            << -strength;
        throw Error(ErrorCode::NotAdmissible, msg.str());
    }
}

double flow_scale(const Flow& flow) {
    double cmax = 0.0;
    for (std::size_t e = 0; e < flow.edges().size(); ++e) cmax = std::max(cmax, flow.edges().symmetric(e));
    const double vmax = flow.values().size() ? flow.values().cwiseAbs().maxCoeff() : 0.0;
    return std::max({cmax, vmax, 1e-300});
}

}  // namespace

double dirichlet_upper_bound(const Chain& chain, const ProbVector& /*pi*/, std::span<const Index> a,
                             std::span<const Index> b, const Vector& f, const Flow& phi, const ToleranceConfig& tol) {
    auto [sa, sb] = validate_sets(chain.size(), a, b);
    require_boundary_values(chain, sa, f, 1.0, tol.admissibility, "test function");
    require_boundary_values(chain, sb, f, 0.0, tol.admissibility, "test function");
    require_divergence(chain, phi, sa, sb, 0.0, tol.admissibility * flow_scale(phi));
    const Flow diff = phi_flow(phi.edge_set(), f) - phi;
    return diff.norm2();
}

double thomson_lower_bound(const Chain& chain, const ProbVector& /*pi*/, std::span<const Index> a,
                           std::span<const Index> b, const Flow& psi, const Vector& g, const ToleranceConfig& tol) {
    auto [sa, sb] = validate_sets(chain.size(), a, b);
    require_boundary_values(chain, sa, g, 0.0, tol.admissibility, "test function");
    require_boundary_values(chain, sb, g, 0.0, tol.admissibility, "test function");
    require_divergence(chain, psi, sa, sb, 1.0, tol.admissibility * std::max(1.0, flow_scale(psi)));
    const Flow diff = phi_flow(psi.edge_set(), g) - psi;
    return 1.0 / diff.norm2();
}

DirichletOptimizer dirichlet_optimizer(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                       std::span<const Index> b, const ToleranceConfig& tol) {
    const Vector h = equilibrium_potential(chain, pi, a, b, tol).h;
    const Vector hs = equilibrium_potential(adjoint(chain, pi, tol), pi, a, b, tol).h;
    auto edges = EdgeSet::build(chain, pi);
    Flow phi = 0.5 * (phi_flow(edges, hs) - phi_star_flow(edges, h));
    return {0.5 * (h + hs), std::move(phi)};
}

ThomsonOptimizer thomson_optimizer(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                   std::span<const Index> b, const ToleranceConfig& tol) {
    const auto sol = equilibrium_potential(chain, pi, a, b, tol);
    const Vector hs = equilibrium_potential(adjoint(chain, pi, tol), pi, a, b, tol).h;
    auto edges = EdgeSet::build(chain, pi);
    const double scale = 0.5 / sol.capacity;
    Flow psi = scale * (phi_flow(edges, hs) + phi_star_flow(edges, sol.h));
    return {std::move(psi), scale * (hs - sol.h)};
}

FunctionBound thomson_function_bound(const Chain& chain, const ProbVector& pi, std::span<const Index> a,
                                     std::span<const Index> b, const Vector& f, double epsilon,
                                     const ToleranceConfig& tol) {
    if (!is_reversible(chain, pi, tol.verify)) {
        throw Error(ErrorCode::NotReversible, "the function form of the Thomson principle needs a reversible chain");
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error(ErrorCode::BadParams, "epsilon must lie in (0, 1)");
    auto [sa, sb] = validate_sets(chain.size(), a, b);
    const Vector lf = apply_generator(chain, f);
    double on_a = 0.0;
    for (Index x : sa) on_a += pi[x] * lf(x);
    double off = 0.0;
    double worst = 0.0;
    for (Index x = 0; x < chain.size(); ++x) {
        if (std::binary_search(sa.begin(), sa.end(), x) || std::binary_search(sb.begin(), sb.end(), x)) continue;
        off += pi[x] * std::abs(lf(x));
        worst = std::max(worst, std::abs(lf(x)));
    }
    const double d = dirichlet_form(chain, pi, f);
    FunctionBound out;
    out.epsilon = epsilon;
    if (!(d > 0.0)) return out;
    const double fscale = std::max(1.0, f.cwiseAbs().maxCoeff());
    if (worst <= tol.verify * chain.max_rate() * fscale) out.strict = on_a * on_a / d;
    out.relaxed = std::max(0.0, ((1.0 - epsilon) * on_a * on_a - off * off / epsilon) / d);
    return out;
}

double dirichlet_ii(const Chain& chain, const ProbVector& pi, std::span<const Index> a, std::span<const Index> b,
                    const Vector& f, const ToleranceConfig& tol) {
    auto [sa, sb] = validate_sets(chain.size(), a, b);
    require_boundary_values(chain, sa, f, 1.0, tol.admissibility, "test function");
    require_boundary_values(chain, sb, f, 0.0, tol.admissibility, "test function");

    // Quotient coordinates: position 0 is the common value on A, then one
    // coordinate per state outside A and B; g vanishes on B (the objective
    // is invariant under constants).
    const Index n = chain.size();
    std::vector<Index> coord(static_cast<std::size_t>(n), -1);
    Index m = 1;
    for (Index x = 0; x < n; ++x) {
        if (std::binary_search(sa.begin(), sa.end(), x)) {
            coord[static_cast<std::size_t>(x)] = 0;
        } else if (!std::binary_search(sb.begin(), sb.end(), x)) {
            coord[static_cast<std::size_t>(x)] = m++;
        }
    }
    // D(g) = 1/2 sum c(x,y) (g(y) - g(x))^2 = z^T K z, and
    // 2 <f, Lg>_pi = 2 sum_x pi f(x) sum_y R(x,y) (g(y) - g(x)) = 2 b^T z.
    std::vector<Eigen::Triplet<double>> triplets;
    Vector rhs = Vector::Zero(m);
    for (Index x = 0; x < n; ++x) {
        const Index cx = coord[static_cast<std::size_t>(x)];
        for (const auto& t : chain.transitions(x)) {
            const Index cy = coord[static_cast<std::size_t>(t.to)];
            const double c = pi[x] * t.rate;
            // 1/2 c (z_cy - z_cx)^2 contributes c/2 to the Hessian blocks.
            if (cx >= 0) triplets.emplace_back(cx, cx, 0.5 * c);
            if (cy >= 0) triplets.emplace_back(cy, cy, 0.5 * c);
            if (cx >= 0 && cy >= 0) {
                triplets.emplace_back(cx, cy, -0.5 * c);
                triplets.emplace_back(cy, cx, -0.5 * c);
            }
            const double w = pi[x] * f(x) * t.rate;
            if (cy >= 0) rhs(cy) += w;
            if (cx >= 0) rhs(cx) -= w;
        }
    }
    SparseMatrix k(m, m);
    k.setFromTriplets(triplets.begin(), triplets.end());
    const Vector z = detail::sparse_solve(k, rhs).col(0);
    return rhs.dot(z);
}

Vector poisson_solve(const Chain& chain, const ProbVector& pi, const Vector& g, double theta,
                     const ToleranceConfig& tol) {
    if (!(theta > 0.0)) throw Error(ErrorCode::BadParams, "theta must be positive");
    const double gscale = std::max(1.0, g.cwiseAbs().maxCoeff());
    const double mean = pi.weights().dot(g);
    if (std::abs(mean) > tol.verify * gscale) {
        std::ostringstream msg;
        msg << "right-hand side has pi-mean " << mean << ", expected 0";
        throw Error(ErrorCode::NotZeroMean, msg.str());
    }
    const Index n = chain.size();
    std::vector<Eigen::Triplet<double>> triplets;
    for (Index x = 0; x < n - 1; ++x) {
        triplets.emplace_back(x, x, -theta * chain.holding_rate(x));
        for (const auto& t : chain.transitions(x)) triplets.emplace_back(x, t.to, theta * t.rate);
    }
    for (Index y = 0; y < n; ++y) triplets.emplace_back(n - 1, y, pi[y]);
    SparseMatrix a(n, n);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Vector rhs = g;
    rhs(n - 1) = 0.0;
    Vector f = detail::sparse_solve(a, rhs).col(0);
    const double residual = (theta * apply_generator(chain, f) - g).cwiseAbs().maxCoeff();
    if (residual > tol.verify * gscale * std::max(1.0, theta * chain.max_rate())) {
        throw Error(ErrorCode::SolverFailure, "Poisson residual exceeds tolerance");
    }
    return f;
}

double sector_ratio_at(const Chain& chain, const ProbVector& pi, const Vector& f, const ToleranceConfig& tol) {
    const double df = dirichlet_form(chain, pi, f);
    if (!(df > 0.0)) return 0.0;
    const Chain sym = symmetric_part(chain, pi, tol);
    Vector lf = apply_generator(chain, f);
    // Remove rounding in the pi-mean of Lf before the solve.
    lf.array() -= pi.weights().dot(lf);
    const Vector g = poisson_solve(sym, pi, -lf, 1.0, tol);
    const double num = inner(pi, lf, g);
    return std::max(0.0, num) / df;
}

SectorEstimate sector_ratio(const Chain& chain, const ProbVector& pi, int sample_count, std::uint64_t seed,
                            const ToleranceConfig& tol) {
    SectorEstimate est;
    est.bound = 2.0 * static_cast<double>(chain.size());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    const Chain sym = symmetric_part(chain, pi, tol);
    for (int s = 0; s < sample_count; ++s) {
        Vector f(chain.size());
        for (Index i = 0; i < f.size(); ++i) f(i) = normal(rng);
        const double df = dirichlet_form(chain, pi, f);
        if (!(df > 0.0)) continue;
        Vector lf = apply_generator(chain, f);
        lf.array() -= pi.weights().dot(lf);
        const Vector g = poisson_solve(sym, pi, -lf, 1.0, tol);
        est.ratio = std::max(est.ratio, inner(pi, lf, g) / df);
        ++est.samples;
    }
    return est;
}

}  // namespace metastab
