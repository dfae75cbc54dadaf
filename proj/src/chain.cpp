#include "metastab/chain.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <deque>
#include <numeric>
#include <sstream>

#include "linalg.hpp"

namespace metastab {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::DuplicateLabel: return "DuplicateLabel";
        case ErrorCode::DuplicateEdge: return "DuplicateEdge";
        case ErrorCode::NonPositiveRate: return "NonPositiveRate";
        case ErrorCode::NotIrreducible: return "NotIrreducible";
        case ErrorCode::NotIrreducibleAfterReflection: return "NotIrreducibleAfterReflection";
        case ErrorCode::NotStationary: return "NotStationary";
        case ErrorCode::NotReversible: return "NotReversible";
        case ErrorCode::NotZeroMean: return "NotZeroMean";
        case ErrorCode::NotAdmissible: return "NotAdmissible";
        case ErrorCode::BadSets: return "BadSets";
        case ErrorCode::BadSubset: return "BadSubset";
        case ErrorCode::BadPartition: return "BadPartition";
        case ErrorCode::BadParams: return "BadParams";
        case ErrorCode::NonPositiveGamma: return "NonPositiveGamma";
        case ErrorCode::StartsInDelta: return "StartsInDelta";
        case ErrorCode::InvalidPath: return "InvalidPath";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::TooLarge: return "TooLarge";
        case ErrorCode::SolverFailure: return "SolverFailure";
    }
    return "Unknown";
}

ToleranceConfig ToleranceConfig::from_env() {
    ToleranceConfig cfg;
    if (const char* env = std::getenv("METASTAB_TOL")) {
        char* end = nullptr;
        const double v = std::strtod(env, &end);
        if (end != env && std::isfinite(v) && v > 0.0) cfg.verify = v;
    }
    return cfg;
}

const ToleranceConfig& default_tolerance() {
    static const ToleranceConfig cfg = ToleranceConfig::from_env();
    return cfg;
}

// ---------------------------------------------------------------------------
// Chain

namespace {

std::vector<bool> reachable(const std::vector<std::vector<Index>>& adj, Index start) {
    std::vector<bool> seen(adj.size(), false);
    std::deque<Index> queue{start};
    seen[static_cast<std::size_t>(start)] = true;
    while (!queue.empty()) {
        const Index v = queue.front();
        queue.pop_front();
        for (Index w : adj[static_cast<std::size_t>(v)]) {
            if (!seen[static_cast<std::size_t>(w)]) {
                seen[static_cast<std::size_t>(w)] = true;
                queue.push_back(w);
            }
        }
    }
    return seen;
}

}  // namespace

void Chain::finalize() {
    const auto n = labels_.size();
    if (n < 2) {
        throw Error(ErrorCode::BadParams, "a chain needs at least two states");
    }
    index_.clear();
    for (std::size_t i = 0; i < n; ++i) {
        if (!index_.emplace(labels_[i], static_cast<Index>(i)).second) {
            throw Error(ErrorCode::DuplicateLabel, "duplicate state label '" + labels_[i] + "'");
        }
    }
    holding_.assign(n, 0.0);
    max_rate_ = 0.0;
    edge_count_ = 0;
    std::vector<std::vector<Index>> fwd(n), bwd(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& row = out_[i];
        std::sort(row.begin(), row.end(), [](const Transition& a, const Transition& b) { return a.to < b.to; });
        for (std::size_t k = 0; k < row.size(); ++k) {
            const auto& t = row[k];
            if (t.to < 0 || static_cast<std::size_t>(t.to) >= n) {
                throw Error(ErrorCode::UnknownLabel, "transition target out of range");
            }
            if (static_cast<std::size_t>(t.to) == i) {
                throw Error(ErrorCode::BadParams, "self-loop at '" + labels_[i] + "'");
            }
            if (!(t.rate > 0.0) || !std::isfinite(t.rate)) {
                std::ostringstream msg;
                msg << "rate " << labels_[i] << "->" << labels_[static_cast<std::size_t>(t.to)]
                    << " must be positive and finite (got " << t.rate << ")";
                throw Error(ErrorCode::NonPositiveRate, msg.str());
            }
            if (k > 0 && row[k - 1].to == t.to) {
                throw Error(ErrorCode::DuplicateEdge, "duplicate edge " + labels_[i] + "->" +
                                                          labels_[static_cast<std::size_t>(t.to)]);
            }
            holding_[i] += t.rate;
            max_rate_ = std::max(max_rate_, t.rate);
            fwd[i].push_back(t.to);
            bwd[static_cast<std::size_t>(t.to)].push_back(static_cast<Index>(i));
        }
        edge_count_ += row.size();
    }
    // Strong connectivity: everything reaches state 0 and state 0 reaches
    // everything. The witness (x, y) means y is not reachable from x.
    const auto to_root = reachable(bwd, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!to_root[i]) {
            throw Error(ErrorCode::NotIrreducible, "chain is not irreducible: '" + labels_[0] +
                                                       "' is unreachable from '" + labels_[i] + "'");
        }
    }
    const auto from_root = reachable(fwd, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!from_root[i]) {
            throw Error(ErrorCode::NotIrreducible, "chain is not irreducible: '" + labels_[i] +
                                                       "' is unreachable from '" + labels_[0] + "'");
        }
    }
}

Chain Chain::build(std::vector<std::string> labels, const std::vector<RateTriple>& rates) {
    Chain c;
    c.labels_ = std::move(labels);
    c.out_.assign(c.labels_.size(), {});
    std::unordered_map<std::string, Index> idx;
    for (std::size_t i = 0; i < c.labels_.size(); ++i) {
        if (!idx.emplace(c.labels_[i], static_cast<Index>(i)).second) {
            throw Error(ErrorCode::DuplicateLabel, "duplicate state label '" + c.labels_[i] + "'");
        }
    }
    for (const auto& t : rates) {
        const auto from = idx.find(t.from);
        const auto to = idx.find(t.to);
        if (from == idx.end() || to == idx.end()) {
            throw Error(ErrorCode::UnknownLabel, "rate " + t.from + "->" + t.to + " references an undeclared state");
        }
        c.out_[static_cast<std::size_t>(from->second)].push_back({to->second, t.rate});
    }
    c.finalize();
    return c;
}

Chain Chain::from_transitions(std::vector<std::string> labels, std::vector<std::vector<Transition>> out) {
    if (labels.size() != out.size()) {
        throw Error(ErrorCode::BadParams, "label and transition lists differ in length");
    }
    Chain c;
    c.labels_ = std::move(labels);
    c.out_ = std::move(out);
    c.finalize();
    return c;
}

std::optional<Index> Chain::find(std::string_view label) const {
    const auto it = index_.find(std::string(label));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

Index Chain::index_of(std::string_view label) const {
    if (auto i = find(label)) return *i;
    throw Error(ErrorCode::UnknownLabel, "unknown state label '" + std::string(label) + "'");
}

std::vector<Index> Chain::indices_of(std::span<const std::string> labels) const {
    std::vector<Index> out;
    out.reserve(labels.size());
    for (const auto& l : labels) out.push_back(index_of(l));
    return out;
}

double Chain::rate(Index from, Index to) const {
    const auto row = transitions(from);
    const auto it = std::lower_bound(row.begin(), row.end(), to,
                                     [](const Transition& t, Index v) { return t.to < v; });
    return (it != row.end() && it->to == to) ? it->rate : 0.0;
}

SparseMatrix Chain::generator() const {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(edge_count_ + labels_.size());
    for (Index i = 0; i < size(); ++i) {
        triplets.emplace_back(i, i, -holding_rate(i));
        for (const auto& t : transitions(i)) triplets.emplace_back(i, t.to, t.rate);
    }
    SparseMatrix q(size(), size());
    q.setFromTriplets(triplets.begin(), triplets.end());
    return q;
}

Chain build_chain(std::vector<std::string> labels, const std::vector<RateTriple>& rates) {
    return Chain::build(std::move(labels), rates);
}

// ---------------------------------------------------------------------------
// ProbVector / Partition

ProbVector ProbVector::from_weights(Vector weights, double tol) {
    if (weights.size() == 0) throw Error(ErrorCode::BadParams, "empty probability vector");
    for (Index i = 0; i < weights.size(); ++i) {
        if (!std::isfinite(weights(i)) || weights(i) < -tol) {
            throw Error(ErrorCode::BadParams, "probability vector has a negative or non-finite entry");
        }
    }
    if (std::abs(weights.sum() - 1.0) > tol) {
        throw Error(ErrorCode::BadParams, "probability vector does not sum to one");
    }
    return ProbVector(std::move(weights));
}

ProbVector ProbVector::normalized(Vector weights) {
    const double total = weights.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw Error(ErrorCode::BadParams, "weights must have a positive finite sum");
    }
    weights /= total;
    return from_weights(std::move(weights));
}

double ProbVector::mass(std::span<const Index> states) const {
    double m = 0.0;
    for (Index i : states) m += weights_(i);
    return m;
}

Partition Partition::validated(Index state_count, std::vector<std::vector<Index>> valleys,
                               std::optional<std::vector<Index>> delta) {
    Partition p;
    p.owner_.assign(static_cast<std::size_t>(state_count), -2);
    for (std::size_t j = 0; j < valleys.size(); ++j) {
        auto& v = valleys[j];
        if (v.empty()) throw Error(ErrorCode::BadPartition, "valley " + std::to_string(j) + " is empty");
        std::sort(v.begin(), v.end());
        for (Index s : v) {
            if (s < 0 || s >= state_count) throw Error(ErrorCode::BadPartition, "valley state out of range");
            auto& o = p.owner_[static_cast<std::size_t>(s)];
            if (o != -2) throw Error(ErrorCode::BadPartition, "valleys overlap or repeat a state");
            o = static_cast<int>(j);
        }
    }
    if (delta) {
        for (Index s : *delta) {
            if (s < 0 || s >= state_count) throw Error(ErrorCode::BadPartition, "delta state out of range");
            auto& o = p.owner_[static_cast<std::size_t>(s)];
            if (o != -2) throw Error(ErrorCode::BadPartition, "delta overlaps a valley or repeats a state");
            o = -1;
        }
        for (int o : p.owner_) {
            if (o == -2) throw Error(ErrorCode::BadPartition, "valleys and delta do not cover the state space");
        }
    }
    for (std::size_t s = 0; s < p.owner_.size(); ++s) {
        if (p.owner_[s] < 0) {
            p.owner_[s] = -1;
            p.delta_.push_back(static_cast<Index>(s));
        }
    }
    p.valleys_ = std::move(valleys);
    return p;
}

Partition Partition::from_labels(const Chain& chain, const std::vector<std::vector<std::string>>& valleys,
                                 const std::optional<std::vector<std::string>>& delta) {
    std::vector<std::vector<Index>> idx;
    idx.reserve(valleys.size());
    for (const auto& v : valleys) idx.push_back(chain.indices_of(v));
    std::optional<std::vector<Index>> d;
    if (delta) d = chain.indices_of(*delta);
    return validated(chain.size(), std::move(idx), std::move(d));
}

Partition Partition::from_indices(Index state_count, std::vector<std::vector<Index>> valleys) {
    return validated(state_count, std::move(valleys), std::nullopt);
}

std::vector<Index> Partition::valley_union() const {
    std::vector<Index> out;
    for (std::size_t s = 0; s < owner_.size(); ++s) {
        if (owner_[s] >= 0) out.push_back(static_cast<Index>(s));
    }
    return out;
}

std::vector<Index> Partition::other_valleys(std::size_t j) const {
    std::vector<Index> out;
    for (std::size_t s = 0; s < owner_.size(); ++s) {
        if (owner_[s] >= 0 && static_cast<std::size_t>(owner_[s]) != j) out.push_back(static_cast<Index>(s));
    }
    return out;
}

std::vector<Index> Partition::other_valleys(std::size_t j, std::size_t k) const {
    std::vector<Index> out;
    for (std::size_t s = 0; s < owner_.size(); ++s) {
        const int o = owner_[s];
        if (o >= 0 && static_cast<std::size_t>(o) != j && static_cast<std::size_t>(o) != k) {
            out.push_back(static_cast<Index>(s));
        }
    }
    return out;
}

void Partition::require_reducible() const {
    if (valleys_.size() < 2) throw Error(ErrorCode::BadPartition, "at least two valleys are required");
}

// ---------------------------------------------------------------------------
// Calculus

double stationarity_residual(const Chain& chain, const Vector& w) {
    Vector flux = Vector::Zero(chain.size());
    for (Index i = 0; i < chain.size(); ++i) {
        flux(i) -= w(i) * chain.holding_rate(i);
        for (const auto& t : chain.transitions(i)) flux(t.to) += w(i) * t.rate;
    }
    return flux.cwiseAbs().maxCoeff();
}

namespace {

Vector stationary_direct(const Chain& chain) {
    const Index n = chain.size();
    // Columns of Q^T are rows of Q; the last balance equation becomes the
    // normalization row.
    std::vector<Eigen::Triplet<double>> triplets;
    for (Index i = 0; i < n; ++i) {
        if (i != n - 1) triplets.emplace_back(i, i, -chain.holding_rate(i));
        for (const auto& t : chain.transitions(i)) {
            if (t.to != n - 1) triplets.emplace_back(t.to, i, t.rate);
        }
        triplets.emplace_back(n - 1, i, 1.0);
    }
    SparseMatrix a(n, n);
    a.setFromTriplets(triplets.begin(), triplets.end());
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, 1);
    rhs(n - 1, 0) = 1.0;
    return detail::sparse_solve(a, rhs).col(0);
}

Vector stationary_power(const Chain& chain, double tol) {
    const Index n = chain.size();
    double lambda = 0.0;
    for (Index i = 0; i < n; ++i) lambda = std::max(lambda, chain.holding_rate(i));
    lambda *= 1.05;  // aperiodic uniformized kernel
    Vector w = Vector::Constant(n, 1.0 / static_cast<double>(n));
    for (int it = 0; it < 2000000; ++it) {
        Vector next = w;
        for (Index i = 0; i < n; ++i) {
            next(i) -= w(i) * chain.holding_rate(i) / lambda;
            for (const auto& t : chain.transitions(i)) next(t.to) += w(i) * t.rate / lambda;
        }
        next /= next.sum();
        const double change = (next - w).cwiseAbs().maxCoeff();
        w = std::move(next);
        if (change < 1e-3 * tol && stationarity_residual(chain, w) <= tol * chain.max_rate()) break;
    }
    return w;
}

}  // namespace

ProbVector stationary(const Chain& chain, const ToleranceConfig& tol) {
    Vector w = chain.size() <= tol.dense_guard ? stationary_direct(chain)
                                                : stationary_power(chain, tol.stationarity);
    for (Index i = 0; i < w.size(); ++i) {
        if (!(w(i) > 0.0)) {
            throw Error(ErrorCode::SolverFailure, "stationary solve produced a non-positive weight");
        }
    }
    w /= w.sum();
    const double residual = stationarity_residual(chain, w);
    if (residual > tol.stationarity * chain.max_rate()) {
        std::ostringstream msg;
        msg << "stationary residual " << residual << " exceeds tolerance";
        throw Error(ErrorCode::SolverFailure, msg.str());
    }
    return ProbVector::from_weights(std::move(w), tol.normalization);
}

Vector apply_generator(const Chain& chain, const Vector& f) {
    Vector out(chain.size());
    for (Index i = 0; i < chain.size(); ++i) {
        double acc = 0.0;
        for (const auto& t : chain.transitions(i)) acc += t.rate * (f(t.to) - f(i));
        out(i) = acc;
    }
    return out;
}

double inner(const ProbVector& pi, const Vector& f, const Vector& g) {
    return (pi.weights().array() * f.array() * g.array()).sum();
}

namespace {

void require_stationary(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol) {
    if (pi.size() != chain.size()) {
        throw Error(ErrorCode::NotStationary, "measure and chain have different sizes");
    }
    // The verify tolerance is relative to the largest conductance scale.
    if (stationarity_residual(chain, pi.weights()) > tol.verify * chain.max_rate()) {
        throw Error(ErrorCode::NotStationary, "measure is not stationary for the chain");
    }
}

}  // namespace

Chain adjoint(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol) {
    require_stationary(chain, pi, tol);
    std::vector<std::vector<Transition>> out(static_cast<std::size_t>(chain.size()));
    for (Index y = 0; y < chain.size(); ++y) {
        for (const auto& t : chain.transitions(y)) {
            // R*(x, y) = pi(y) R(y, x) / pi(x) with x = t.to
            out[static_cast<std::size_t>(t.to)].push_back({y, pi[y] * t.rate / pi[t.to]});
        }
    }
    return Chain::from_transitions(chain.labels(), std::move(out));
}

Chain symmetric_part(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol) {
    const Chain star = adjoint(chain, pi, tol);
    std::vector<std::vector<Transition>> out(static_cast<std::size_t>(chain.size()));
    for (Index x = 0; x < chain.size(); ++x) {
        auto a = chain.transitions(x);
        auto b = star.transitions(x);
        std::size_t i = 0, j = 0;
        auto& row = out[static_cast<std::size_t>(x)];
        while (i < a.size() || j < b.size()) {
            if (j == b.size() || (i < a.size() && a[i].to < b[j].to)) {
                row.push_back({a[i].to, 0.5 * a[i].rate});
                ++i;
            } else if (i == a.size() || b[j].to < a[i].to) {
                row.push_back({b[j].to, 0.5 * b[j].rate});
                ++j;
            } else {
                row.push_back({a[i].to, 0.5 * (a[i].rate + b[j].rate)});
                ++i;
                ++j;
            }
        }
    }
    return Chain::from_transitions(chain.labels(), std::move(out));
}

bool is_reversible(const Chain& chain, const ProbVector& pi, double rel_tol) {
    for (Index x = 0; x < chain.size(); ++x) {
        for (const auto& t : chain.transitions(x)) {
            const double c_xy = pi[x] * t.rate;
            const double c_yx = pi[t.to] * chain.rate(t.to, x);
            if (std::abs(c_xy - c_yx) > rel_tol * std::max(c_xy, c_yx)) return false;
        }
    }
    return true;
}

double dirichlet_form(const Chain& chain, const ProbVector& pi, const Vector& f) {
    double acc = 0.0;
    for (Index x = 0; x < chain.size(); ++x) {
        for (const auto& t : chain.transitions(x)) {
            const double d = f(t.to) - f(x);
            acc += pi[x] * t.rate * d * d;
        }
    }
    return 0.5 * acc;
}

double energy_product(const Chain& chain, const ProbVector& pi, const Vector& f, const Vector& g) {
    return -inner(pi, apply_generator(chain, f), g);
}

SpectralGap spectral_gap(const Chain& chain, const ProbVector& pi, const ToleranceConfig& tol) {
    const Index n = chain.size();
    if (n > tol.dense_guard) {
        throw Error(ErrorCode::TooLarge, "spectral gap needs a dense eigensolve; " + std::to_string(n) +
                                             " states exceed the guard of " + std::to_string(tol.dense_guard));
    }
    const Chain sym = symmetric_part(chain, pi, tol);
    // Pi^{1/2} (-L^s) Pi^{-1/2} is symmetric with the same spectrum.
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (Index x = 0; x < n; ++x) {
        m(x, x) = sym.holding_rate(x);
        for (const auto& t : sym.transitions(x)) {
            m(x, t.to) = -t.rate * std::sqrt(pi[x] / pi[t.to]);
        }
    }
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::SolverFailure, "eigensolver did not converge");
    const double gap = es.eigenvalues()(1);
    if (!(gap > 0.0)) throw Error(ErrorCode::SolverFailure, "non-positive spectral gap");
    return {gap, 1.0 / gap};
}

ProbVector conditioned(const ProbVector& pi, std::span<const Index> subset) {
    Vector w(static_cast<Index>(subset.size()));
    for (std::size_t k = 0; k < subset.size(); ++k) w(static_cast<Index>(k)) = pi[subset[k]];
    return ProbVector::normalized(std::move(w));
}

std::vector<Index> normalized_subset(std::span<const Index> states, Index state_count) {
    std::vector<Index> out(states.begin(), states.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    if (!out.empty() && (out.front() < 0 || out.back() >= state_count)) {
        throw Error(ErrorCode::BadSubset, "state index out of range");
    }
    return out;
}

Vector indicator(Index state_count, std::span<const Index> states) {
    Vector v = Vector::Zero(state_count);
    for (Index s : states) v(s) = 1.0;
    return v;
}

}  // namespace metastab
