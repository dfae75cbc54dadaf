#include "metastab/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

namespace metastab {

namespace {

constexpr double kFormulaResidual = 1e-10;
constexpr Index kZeroRangeGuard = 200000;

// Normalizes the closed-form law and checks it against the generator.
ProbVector verified(const Chain& chain, Vector weights, const std::string& family) {
    ProbVector pi = ProbVector::normalized(std::move(weights));
    const double residual = stationarity_residual(chain, pi.weights());
    if (residual > kFormulaResidual * chain.max_rate()) {
        std::ostringstream msg;
        msg << family << ": closed-form stationary law has residual " << residual;
        throw Error(ErrorCode::SolverFailure, msg.str());
    }
    return pi;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string join(const std::vector<int>& xs, const std::string& prefix) {
    std::string out = prefix;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i > 0 || !prefix.empty()) out += '_';
        out += std::to_string(xs[i]);
    }
    return out;
}

std::vector<std::vector<Transition>> uniform_neighbor_rates(const std::vector<std::set<Index>>& adj) {
    std::vector<std::vector<Transition>> out(adj.size());
    for (std::size_t x = 0; x < adj.size(); ++x) {
        const double r = 1.0 / static_cast<double>(adj[x].size());
        for (Index y : adj[x]) out[x].push_back({y, r});
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Glued cubes

ModelSpec glued_cubes(int d, int n, int ell) {
    if (d < 2 || n < 3 || ell < 1 || 2 * ell >= n) {
        throw Error(ErrorCode::BadParams, "glued_cubes needs d >= 2, N >= 3 and 1 <= ell < N/2");
    }
    const double cube_size = std::pow(static_cast<double>(n), d);
    if (4.0 * cube_size > 2e6) throw Error(ErrorCode::TooLarge, "glued_cubes state space too large");
    const auto per_cube = static_cast<Index>(cube_size);

    auto coords_of = [&](Index local) {
        std::vector<int> c(static_cast<std::size_t>(d));
        for (int i = 0; i < d; ++i) {
            c[static_cast<std::size_t>(i)] = static_cast<int>(local % n) + 1;
            local /= n;
        }
        return c;
    };
    auto local_of = [&](const std::vector<int>& c) {
        Index local = 0;
        for (int i = d - 1; i >= 0; --i) local = local * n + (c[static_cast<std::size_t>(i)] - 1);
        return local;
    };
    const Index low_corner = 0;
    const Index high_corner = per_cube - 1;

    // global index of (cube, local); glued corners belong to the lower cube
    std::vector<std::vector<Index>> global(4, std::vector<Index>(static_cast<std::size_t>(per_cube), -1));
    std::vector<std::string> labels;
    for (int k = 0; k < 4; ++k) {
        for (Index local = 0; local < per_cube; ++local) {
            if (k > 0 && local == low_corner) {
                global[k][static_cast<std::size_t>(local)] = global[k - 1][static_cast<std::size_t>(high_corner)];
                continue;
            }
            if (k == 3 && local == high_corner) {
                global[k][static_cast<std::size_t>(local)] = global[0][static_cast<std::size_t>(low_corner)];
                continue;
            }
            global[k][static_cast<std::size_t>(local)] = static_cast<Index>(labels.size());
            labels.push_back(join(coords_of(local), "k" + std::to_string(k)));
        }
    }

    std::vector<std::set<Index>> adj(labels.size());
    for (int k = 0; k < 4; ++k) {
        for (Index local = 0; local < per_cube; ++local) {
            const auto c = coords_of(local);
            const Index x = global[k][static_cast<std::size_t>(local)];
            for (int i = 0; i < d; ++i) {
                for (int step : {-1, 1}) {
                    auto e = c;
                    e[static_cast<std::size_t>(i)] += step;
                    if (e[static_cast<std::size_t>(i)] < 1 || e[static_cast<std::size_t>(i)] > n) continue;
                    adj[static_cast<std::size_t>(x)].insert(global[k][static_cast<std::size_t>(local_of(e))]);
                }
            }
        }
    }

    Vector degree(static_cast<Index>(labels.size()));
    for (std::size_t x = 0; x < adj.size(); ++x) degree(static_cast<Index>(x)) = static_cast<double>(adj[x].size());

    std::vector<std::vector<Index>> valleys(4);
    for (int k = 0; k < 4; ++k) {
        for (Index local = 0; local < per_cube; ++local) {
            const auto c = coords_of(local);
            const bool core = std::all_of(c.begin(), c.end(), [&](int v) { return v >= ell + 1 && v <= n - ell; });
            if (core) valleys[static_cast<std::size_t>(k)].push_back(global[k][static_cast<std::size_t>(local)]);
        }
    }
    for (auto& v : valleys) std::sort(v.begin(), v.end());

    Chain chain = Chain::from_transitions(labels, uniform_neighbor_rates(adj));
    ProbVector pi = verified(chain, degree, "glued_cubes");
    const auto states = static_cast<Index>(labels.size());
    const double theta = d == 2 ? static_cast<double>(n) * n * std::log(static_cast<double>(n)) : cube_size;
    return ModelSpec{"glued_cubes",
                     {{"d", std::to_string(d)}, {"N", std::to_string(n)}, {"ell", std::to_string(ell)}},
                     std::move(chain),
                     std::move(pi),
                     Partition::from_indices(states, std::move(valleys)),
                     theta};
}

// ---------------------------------------------------------------------------
// Zero-range process

double zero_range_g(int k, double alpha) {
    if (k <= 0) return 0.0;
    if (k == 1) return 1.0;
    return std::pow(static_cast<double>(k) / (k - 1), alpha);
}

ModelSpec zero_range(int l, int n, double alpha, double p, int ell) {
    if (l < 3 || n < 1 || !(alpha > 1.0) || !(p >= 0.5 && p <= 1.0)) {
        throw Error(ErrorCode::BadParams, "zero_range needs L >= 3, N >= 1, alpha > 1 and p in [1/2, 1]");
    }
    // C(N+L-1, L-1)
    double count = 1.0;
    for (int i = 1; i < l; ++i) count = count * (n + i) / i;
    if (count > static_cast<double>(kZeroRangeGuard)) {
        throw Error(ErrorCode::TooLarge, "zero_range state space exceeds 200000 configurations");
    }
    const int max_ell = (n + 1) / 2 - 1;  // keeps N - ell > N/2
    if (ell < 0 || ell > max_ell) throw Error(ErrorCode::BadParams, "ell must satisfy 0 <= ell < N/2");
    if (ell == 0) ell = std::min(max_ell, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));

    std::vector<std::vector<int>> configs;
    std::vector<int> eta(static_cast<std::size_t>(l), 0);
    // compositions in lexicographic order
    auto rec = [&](auto&& self, int site, int left) -> void {
        if (site == l - 1) {
            eta[static_cast<std::size_t>(site)] = left;
            configs.push_back(eta);
            return;
        }
        for (int k = left; k >= 0; --k) {
            eta[static_cast<std::size_t>(site)] = k;
            self(self, site + 1, left - k);
        }
    };
    rec(rec, 0, n);
    std::map<std::vector<int>, Index> index;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        index.emplace(configs[i], static_cast<Index>(i));
        labels.push_back(join(configs[i], ""));
    }

    std::vector<std::vector<Transition>> out(configs.size());
    Vector log_w(static_cast<Index>(configs.size()));
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto& c = configs[i];
        double lw = 0.0;
        for (int x = 0; x < l; ++x) {
            const int k = c[static_cast<std::size_t>(x)];
            if (k > 0) lw -= alpha * std::log(static_cast<double>(k));
            if (k == 0) continue;
            const double g = zero_range_g(k, alpha);
            for (int dir : {1, -1}) {
                const double q = dir == 1 ? p : 1.0 - p;
                if (q <= 0.0) continue;
                auto next = c;
                next[static_cast<std::size_t>(x)] -= 1;
                next[static_cast<std::size_t>((x + dir + l) % l)] += 1;
                out[i].push_back({index.at(next), g * q});
            }
        }
        log_w(static_cast<Index>(i)) = lw;
    }
    for (auto& row : out) std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) { return a.to < b.to; });

    Chain chain = Chain::from_transitions(labels, std::move(out));
    const Vector w = (log_w.array() - log_w.maxCoeff()).exp();
    ProbVector pi = verified(chain, w, "zero_range");

    std::vector<std::vector<Index>> valleys(static_cast<std::size_t>(l));
    for (std::size_t i = 0; i < configs.size(); ++i) {
        for (int x = 0; x < l; ++x) {
            if (configs[i][static_cast<std::size_t>(x)] >= n - ell) {
                valleys[static_cast<std::size_t>(x)].push_back(static_cast<Index>(i));
            }
        }
    }
    const Index states = chain.size();
    return ModelSpec{"zero_range",
                     {{"L", std::to_string(l)},
                      {"N", std::to_string(n)},
                      {"alpha", fmt(alpha)},
                      {"p", fmt(p)},
                      {"ell", std::to_string(ell)}},
                     std::move(chain),
                     std::move(pi),
                     Partition::from_indices(states, std::move(valleys)),
                     std::pow(static_cast<double>(n), 1.0 + alpha)};
}

// ---------------------------------------------------------------------------
// Random walk in a potential field

namespace {

std::vector<std::vector<Index>> grid_neighbors(const Grid& g) {
    const int m = g.points;
    std::vector<std::vector<Index>> nb(static_cast<std::size_t>(g.size()));
    for (int i = 0; i < g.size(); ++i) {
        const int x = g.dim == 1 ? i : i % m;
        const int y = g.dim == 1 ? 0 : i / m;
        auto add = [&](int xx, int yy) {
            if (xx < 0 || xx >= m || yy < 0 || (g.dim == 2 && yy >= m) || (g.dim == 1 && yy != 0)) return;
            nb[static_cast<std::size_t>(i)].push_back(g.dim == 1 ? xx : yy * m + xx);
        };
        add(x - 1, y);
        add(x + 1, y);
        if (g.dim == 2) {
            add(x, y - 1);
            add(x, y + 1);
        }
        std::sort(nb[static_cast<std::size_t>(i)].begin(), nb[static_cast<std::size_t>(i)].end());
    }
    return nb;
}

struct UnionFind {
    std::vector<Index> parent;
    explicit UnionFind(Index n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
    Index find(Index x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
};

}  // namespace

ModelSpec potential_rw(const Grid& grid, const PotentialFn& f, double n, double eps) {
    if ((grid.dim != 1 && grid.dim != 2) || grid.points < 2 || !(grid.hi > grid.lo)) {
        throw Error(ErrorCode::BadParams, "potential_rw grid must be 1D or 2D with at least 2 points per axis");
    }
    if (!(n > 0.0) || !std::isfinite(n) || !(eps >= 0.0)) {
        throw Error(ErrorCode::BadParams, "potential_rw needs N > 0 and eps >= 0");
    }
    if (grid.size() > 1000000) throw Error(ErrorCode::TooLarge, "potential_rw grid too large");
    const int m = grid.points;
    const Index size = grid.size();
    Vector fv(size);
    std::vector<std::string> labels;
    for (Index i = 0; i < size; ++i) {
        const int x = grid.dim == 1 ? static_cast<int>(i) : static_cast<int>(i % m);
        const int y = grid.dim == 1 ? 0 : static_cast<int>(i / m);
        fv(i) = f(grid.coord(x), grid.dim == 1 ? 0.0 : grid.coord(y));
        if (!std::isfinite(fv(i))) throw Error(ErrorCode::BadParams, "potential must be finite on the grid");
        labels.push_back(grid.dim == 1 ? "i" + std::to_string(x) : "i" + std::to_string(x) + "_" + std::to_string(y));
    }
    const auto nb = grid_neighbors(grid);
    std::vector<std::vector<Transition>> out(static_cast<std::size_t>(size));
    for (Index i = 0; i < size; ++i) {
        for (Index j : nb[static_cast<std::size_t>(i)]) {
            out[static_cast<std::size_t>(i)].push_back({j, std::exp(-0.5 * n * (fv(j) - fv(i)))});
        }
    }
    Chain chain = Chain::from_transitions(labels, std::move(out));
    const Vector w = (-(n * (fv.array() - fv.minCoeff()))).exp();
    ProbVector pi = verified(chain, w, "potential_rw");
    if (!is_reversible(chain, pi, 1e-10)) throw Error(ErrorCode::SolverFailure, "potential_rw is not reversible");

    // strict local minima
    std::vector<Index> minima;
    for (Index i = 0; i < size; ++i) {
        const auto& ns = nb[static_cast<std::size_t>(i)];
        if (std::all_of(ns.begin(), ns.end(), [&](Index j) { return fv(i) < fv(j); })) minima.push_back(i);
    }

    // lowest level at which two minima share a sublevel component
    std::optional<double> saddle;
    if (minima.size() >= 2) {
        std::vector<Index> order(static_cast<std::size_t>(size));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return fv(a) < fv(b); });
        UnionFind uf(size);
        std::vector<char> added(static_cast<std::size_t>(size), 0);
        std::vector<char> has_min(static_cast<std::size_t>(size), 0);
        for (Index x : minima) has_min[static_cast<std::size_t>(x)] = 1;
        for (Index x : order) {
            added[static_cast<std::size_t>(x)] = 1;
            for (Index y : nb[static_cast<std::size_t>(x)]) {
                if (!added[static_cast<std::size_t>(y)]) continue;
                const Index rx = uf.find(x);
                const Index ry = uf.find(y);
                if (rx == ry) continue;
                if (has_min[static_cast<std::size_t>(rx)] && has_min[static_cast<std::size_t>(ry)] && !saddle) {
                    saddle = fv(x);
                }
                uf.parent[static_cast<std::size_t>(ry)] = rx;
                has_min[static_cast<std::size_t>(rx)] |= has_min[static_cast<std::size_t>(ry)];
            }
            if (saddle) break;
        }
    }

    std::optional<Partition> partition;
    if (saddle) {
        const double level = *saddle - eps;
        std::vector<int> comp(static_cast<std::size_t>(size), -1);
        std::vector<std::vector<Index>> valleys;
        for (Index x0 : minima) {
            if (!(fv(x0) < level) || comp[static_cast<std::size_t>(x0)] >= 0) continue;
            const int id = static_cast<int>(valleys.size());
            valleys.emplace_back();
            std::queue<Index> queue;
            queue.push(x0);
            comp[static_cast<std::size_t>(x0)] = id;
            while (!queue.empty()) {
                const Index x = queue.front();
                queue.pop();
                valleys.back().push_back(x);
                for (Index y : nb[static_cast<std::size_t>(x)]) {
                    if (comp[static_cast<std::size_t>(y)] >= 0 || !(fv(y) < level)) continue;
                    comp[static_cast<std::size_t>(y)] = id;
                    queue.push(y);
                }
            }
            std::sort(valleys.back().begin(), valleys.back().end());
        }
        if (valleys.size() >= 2) partition = Partition::from_indices(size, std::move(valleys));
    }

    return ModelSpec{"potential_rw",
                     {{"dim", std::to_string(grid.dim)},
                      {"points", std::to_string(grid.points)},
                      {"lo", fmt(grid.lo)},
                      {"hi", fmt(grid.hi)},
                      {"N", fmt(n)},
                      {"eps", fmt(eps)}},
                     std::move(chain),
                     std::move(pi),
                     std::move(partition),
                     std::nullopt};
}

PotentialFn named_potential(const std::string& name) {
    if (name == "double_well") return [](double x, double y) { return (x * x - 1) * (x * x - 1) + y * y; };
    if (name == "flat") return [](double, double) { return 0.0; };
    if (name == "tilted_well") {
        return [](double x, double y) { return (x * x - 1) * (x * x - 1) + 0.25 * x + y * y; };
    }
    if (name == "four_well") return [](double x, double y) { return (x * x - 1) * (x * x - 1) + (y * y - 1) * (y * y - 1); };
    throw Error(ErrorCode::BadParams, "unknown potential '" + name + "'");
}

// ---------------------------------------------------------------------------
// Model strings

namespace {

class Params {
public:
    Params(std::string family, std::map<std::string, std::string> kv) : family_(std::move(family)), kv_(std::move(kv)) {}

    std::string text(const std::string& key, const std::string& fallback) {
        used_.insert(key);
        const auto it = kv_.find(key);
        return it == kv_.end() ? fallback : it->second;
    }

    double number(const std::string& key, std::optional<double> fallback) {
        used_.insert(key);
        const auto it = kv_.find(key);
        if (it == kv_.end()) {
            if (!fallback) throw Error(ErrorCode::ParseError, family_ + ": missing parameter '" + key + "'");
            return *fallback;
        }
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(it->second, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != it->second.size()) {
            throw Error(ErrorCode::ParseError, family_ + ": parameter '" + key + "' is not a number");
        }
        return v;
    }

    int integer(const std::string& key, std::optional<int> fallback) {
        const double v = number(key, fallback ? std::optional<double>(*fallback) : std::nullopt);
        if (v != std::floor(v) || std::abs(v) > 1e9) {
            throw Error(ErrorCode::ParseError, family_ + ": parameter '" + key + "' must be an integer");
        }
        return static_cast<int>(v);
    }

    void finish() const {
        for (const auto& [k, v] : kv_) {
            if (!used_.count(k)) throw Error(ErrorCode::ParseError, family_ + ": unknown parameter '" + k + "'");
        }
    }

private:
    std::string family_;
    std::map<std::string, std::string> kv_;
    std::set<std::string> used_;
};

}  // namespace

ModelSpec parse_model(const std::string& text) {
    const auto colon = text.find(':');
    const std::string family = text.substr(0, colon);
    std::map<std::string, std::string> kv;
    if (colon != std::string::npos) {
        std::stringstream ss(text.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            const auto eq = item.find('=');
            if (eq == std::string::npos || eq == 0) {
                throw Error(ErrorCode::ParseError, "model parameter '" + item + "' is not key=value");
            }
            if (!kv.emplace(item.substr(0, eq), item.substr(eq + 1)).second) {
                throw Error(ErrorCode::ParseError, "model parameter '" + item.substr(0, eq) + "' given twice");
            }
        }
    }
    Params p(family, std::move(kv));
    if (family == "glued_cubes") {
        const int d = p.integer("d", 2);
        const int n = p.integer("N", std::nullopt);
        const int ell = p.integer("ell", std::max(1, n / 4));
        p.finish();
        return glued_cubes(d, n, ell);
    }
    if (family == "zero_range") {
        const int l = p.integer("L", 3);
        const int n = p.integer("N", std::nullopt);
        const double alpha = p.number("alpha", 3.0);
        const double prob = p.number("p", 0.5);
        const int ell = p.integer("ell", 0);
        p.finish();
        return zero_range(l, n, alpha, prob, ell);
    }
    if (family == "potential_rw") {
        Grid g;
        const std::string name = p.text("F", "double_well");
        g.dim = p.integer("dim", 1);
        g.points = p.integer("points", 21);
        g.lo = p.number("lo", -2.0);
        g.hi = p.number("hi", 2.0);
        const double n = p.number("N", std::nullopt);
        const double eps = p.number("eps", 0.1);
        p.finish();
        ModelSpec spec = potential_rw(g, named_potential(name), n, eps);
        spec.params["F"] = name;
        return spec;
    }
    throw Error(ErrorCode::ParseError, "unknown model family '" + family + "'");
}

}  // namespace metastab
