#include "metastab/pathsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace metastab {

// ---------------------------------------------------------------------------
// Paths

Index Path::state_at(double t) const {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto k = static_cast<std::size_t>(it - times.begin());
    return k == 0 ? initial : states[k - 1];
}

void Path::validate() const {
    if (times.size() != states.size()) throw Error(ErrorCode::InvalidPath, "times and states differ in length");
    if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw Error(ErrorCode::InvalidPath, "bad horizon");
    Index prev = initial;
    double last = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!(times[i] > last) || times[i] > horizon) {
            throw Error(ErrorCode::InvalidPath, "jump times must be strictly increasing inside (0, horizon]");
        }
        if (states[i] == prev) throw Error(ErrorCode::InvalidPath, "consecutive states must differ");
        prev = states[i];
        last = times[i];
    }
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Uniform in the open interval (0, 1).
double open_uniform(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

bool contains(std::span<const Index> sorted, Index x) { return std::binary_search(sorted.begin(), sorted.end(), x); }

std::vector<Index> sorted_copy(std::span<const Index> f) {
    std::vector<Index> out(f.begin(), f.end());
    std::sort(out.begin(), out.end());
    return out;
}

// Appends (t, s) unless s repeats the current state.
void push_state(Path& path, double t, Index s) {
    const Index current = path.states.empty() ? path.initial : path.states.back();
    if (s == current) return;
    path.times.push_back(t);
    path.states.push_back(s);
}

}  // namespace

std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t state = seed;
    const std::uint64_t a = splitmix64(state);
    state = a ^ (index * 0xd1b54a32d192ed03ULL);
    return std::mt19937_64(splitmix64(state));
}

Path simulate(const Chain& chain, Index start, double horizon, std::mt19937_64& rng) {
    if (start < 0 || start >= chain.size()) throw Error(ErrorCode::UnknownLabel, "start state out of range");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw Error(ErrorCode::BadParams, "horizon must be positive");
    Path path;
    path.initial = start;
    path.horizon = horizon;
    Index x = start;
    double t = 0.0;
    for (;;) {
        const double lambda = chain.holding_rate(x);
        t += -std::log(open_uniform(rng)) / lambda;
        if (t > horizon) break;
        double u = open_uniform(rng) * lambda;
        const auto out = chain.transitions(x);
        Index next = out.back().to;
        for (const auto& e : out) {
            if (u < e.rate) {
                next = e.to;
                break;
            }
            u -= e.rate;
        }
        path.times.push_back(t);
        path.states.push_back(next);
        x = next;
    }
    return path;
}

Path simulate(const Chain& chain, Index start, double horizon, std::uint64_t seed, std::uint64_t index) {
    auto rng = trial_rng(seed, index);
    return simulate(chain, start, horizon, rng);
}

Path simulate(const Chain& chain, const ProbVector& start, double horizon, std::uint64_t seed, std::uint64_t index) {
    if (start.size() != chain.size()) throw Error(ErrorCode::BadParams, "initial law has the wrong size");
    auto rng = trial_rng(seed, index);
    double u = open_uniform(rng);
    Index x = chain.size() - 1;
    for (Index i = 0; i < chain.size(); ++i) {
        if (u < start[i]) {
            x = i;
            break;
        }
        u -= start[i];
    }
    return simulate(chain, x, horizon, rng);
}

double occupation_time(const Path& path, std::span<const Index> f) {
    return occupation_time(path, f, path.horizon);
}

double occupation_time(const Path& path, std::span<const Index> f, double t) {
    const auto set = sorted_copy(f);
    const double end = std::min(t, path.horizon);
    double total = 0.0;
    for (std::size_t i = 0; i <= path.times.size(); ++i) {
        const double a = path.sojourn_start(i);
        if (a >= end) break;
        if (!contains(set, path.sojourn_state(i))) continue;
        total += std::min(path.sojourn_end(i), end) - a;
    }
    return total;
}

TimeChange::TimeChange(const Path& path, std::span<const Index> f) {
    const auto set = sorted_copy(f);
    for (std::size_t i = 0; i <= path.times.size(); ++i) {
        if (!contains(set, path.sojourn_state(i))) continue;
        const double a = path.sojourn_start(i);
        const double len = path.sojourn_end(i) - a;
        if (!(len > 0.0)) continue;
        starts_.push_back(a);
        offset_.push_back(total_);
        length_.push_back(len);
        total_ += len;
    }
}

double TimeChange::operator()(double u) const {
    if (starts_.empty()) throw Error(ErrorCode::InvalidPath, "the path never visits F");
    const auto it = std::upper_bound(offset_.begin(), offset_.end(), u);
    const auto k = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - offset_.begin()) - 1));
    return starts_[k] + (u - offset_[k]);
}

double TimeChange::occupation(double t) const {
    const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
    if (it == starts_.begin()) return 0.0;
    const auto k = static_cast<std::size_t>(it - starts_.begin()) - 1;
    return offset_[k] + std::min(t - starts_[k], length_[k]);
}

Path trace_path(const Path& path, std::span<const Index> f) {
    const auto set = sorted_copy(f);
    Path out;
    bool started = false;
    double offset = 0.0;
    for (std::size_t i = 0; i <= path.times.size(); ++i) {
        const Index s = path.sojourn_state(i);
        if (!contains(set, s)) continue;
        const double a = path.sojourn_start(i);
        const double len = path.sojourn_end(i) - a;
        if (!(len > 0.0)) continue;
        if (!started) {
            out.initial = s;
            started = true;
        } else {
            push_state(out, offset, s);
        }
        offset += len;
    }
    if (!started) throw Error(ErrorCode::InvalidPath, "the path never spends time in F");
    out.horizon = offset;
    return out;
}

CoarsePath last_passage_path(const CoarsePath& path) {
    if (path.initial == kDeltaSymbol) throw Error(ErrorCode::StartsInDelta, "last-passage path must start in a valley");
    CoarsePath out;
    out.initial = path.initial;
    out.horizon = path.horizon;
    for (std::size_t i = 0; i < path.times.size(); ++i) {
        if (path.states[i] == kDeltaSymbol) continue;
        push_state(out, path.times[i], path.states[i]);
    }
    return out;
}

CoarsePath project(const Path& path, const Partition& partition, Projection mode) {
    auto map = [&](Index s) -> Index {
        const int v = partition.valley_of(s);
        if (v >= 0) return v;
        if (mode == Projection::Psi) throw Error(ErrorCode::InvalidPath, "Psi is defined only on the valleys");
        return kDeltaSymbol;
    };
    CoarsePath out;
    out.initial = map(path.initial);
    out.horizon = path.horizon;
    for (std::size_t i = 0; i < path.times.size(); ++i) push_state(out, path.times[i], map(path.states[i]));
    return out;
}

// ---------------------------------------------------------------------------
// Skorohod-type distance

namespace {

// Valleys 0, 1, 2, 3, ... sit at 1, -1, 2, -2, ...; Delta at 0.
double height(Index s) {
    if (s == kDeltaSymbol) return 0.0;
    const auto level = static_cast<double>(s / 2 + 1);
    return s % 2 == 0 ? level : -level;
}

double gm(double t, double m) {
    if (t <= m - 1.0) return 1.0;
    if (t >= m) return 0.0;
    return m - t;
}

std::vector<double> jumps_inside(const CoarsePath& p, double lo, double hi) {
    std::vector<double> out;
    for (double t : p.times) {
        if (t > lo && t < hi) out.push_back(t);
    }
    return out;
}

// sup over t in [b0, b1] of |g(lam t) w(lam t) - g(t) v(t)| for lam linear
// from (b0 -> a0) to (b1 -> a1); w is reparameterized, v is not.
double segment_cost(const CoarsePath& w, const CoarsePath& v, double a0, double a1, double b0, double b1, double m) {
    const bool identity = a0 == b0 && a1 == b1;
    const double slope = identity ? 1.0 : (a1 - a0) / (b1 - b0);
    auto lam = [&](double t) { return identity ? t : (t == b1 ? a1 : a0 + (t - b0) * slope); };
    auto inv = [&](double s) { return identity ? s : b0 + (s - a0) / slope; };

    std::vector<double> cuts{b0, b1};
    for (double t : v.times) {
        if (t > b0 && t < b1) cuts.push_back(t);
    }
    for (double s : w.times) {
        if (s > a0 && s < a1) cuts.push_back(inv(s));
    }
    if (m - 1.0 > b0 && m - 1.0 < b1) cuts.push_back(m - 1.0);
    if (m - 1.0 > a0 && m - 1.0 < a1) cuts.push_back(inv(m - 1.0));
    std::sort(cuts.begin(), cuts.end());

    double worst = std::max(std::abs(a0 - b0), std::abs(a1 - b1));
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const double p = cuts[i];
        const double q = cuts[i + 1];
        if (!(q > p)) continue;
        const double mid = 0.5 * (p + q);
        const double hw = height(w.state_at(lam(mid)));
        const double hv = height(v.state_at(mid));
        for (double t : {p, q}) {
            worst = std::max(worst, std::abs(gm(lam(t), m) * hw - gm(t, m) * hv));
        }
    }
    return worst;
}

// Bottleneck DP over monotone pairings of jump times of w and v in (0, m).
double dm_upper(const CoarsePath& w, const CoarsePath& v, double m) {
    std::vector<double> a{0.0};
    std::vector<double> b{0.0};
    for (double t : jumps_inside(w, 0.0, m)) a.push_back(t);
    for (double t : jumps_inside(v, 0.0, m)) b.push_back(t);
    a.push_back(m);
    b.push_back(m);
    const std::size_t na = a.size();
    const std::size_t nb = b.size();
    constexpr std::size_t kWindow = 3;
    const std::size_t band = na * nb > 1000000 ? 50 : std::max(na, nb);
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> cost(na * nb, inf);
    cost[0] = 0.0;
    auto at = [&](std::size_t i, std::size_t j) -> double& { return cost[i * nb + j]; };
    auto relax = [&](std::size_t i, std::size_t j, std::size_t i2, std::size_t j2) {
        const double c = std::max(at(i, j), segment_cost(w, v, a[i], a[i2], b[j], b[j2], m));
        if (c < at(i2, j2)) at(i2, j2) = c;
    };
    for (std::size_t i = 0; i + 1 < na; ++i) {
        for (std::size_t j = 0; j + 1 < nb; ++j) {
            if ((i > j ? i - j : j - i) > band) continue;
            if (at(i, j) == inf) continue;
            for (std::size_t di = 1; di <= kWindow && i + di < na - 1; ++di) {
                for (std::size_t dj = 1; dj <= kWindow && j + dj < nb - 1; ++dj) relax(i, j, i + di, j + dj);
            }
            relax(i, j, na - 1, nb - 1);
        }
    }
    return at(na - 1, nb - 1);
}

}  // namespace

double skorohod_distance(const CoarsePath& a, const CoarsePath& b, int m_max) {
    if (m_max < 1) throw Error(ErrorCode::BadParams, "m_max must be at least 1");
    double d = 0.0;
    double weight = 1.0;
    for (int m = 1; m <= m_max; ++m) {
        weight *= 0.5;
        const double dm = std::min(dm_upper(a, b, m), dm_upper(b, a, m));
        d += weight * std::min(1.0, dm);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Estimators

namespace {

// Runs body(i) for i in [0, count) on `jobs` threads, contiguous chunks.
template <class Body>
void parallel_for(int count, unsigned jobs, Body&& body) {
    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max(count, 1))));
    if (jobs == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    const int chunk = (count + static_cast<int>(jobs) - 1) / static_cast<int>(jobs);
    for (unsigned w = 0; w < jobs; ++w) {
        const int lo = static_cast<int>(w) * chunk;
        const int hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (int i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

Estimate summarize(const std::vector<double>& xs) {
    Estimate e;
    if (xs.empty()) return e;
    double sum = 0.0;
    for (double x : xs) sum += x;
    e.mean = sum / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - e.mean) * (x - e.mean);
        e.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
    }
    return e;
}

std::vector<Index> default_starts(const ProbVector& pi, const Partition& partition, const SimOptions& options) {
    if (!options.starts.empty()) return options.starts;
    std::vector<Index> out;
    for (const auto& valley : partition.valleys()) {
        Index best = valley[0];
        for (Index x : valley) {
            if (pi[x] > pi[best]) best = x;
        }
        out.push_back(best);
    }
    return out;
}

void check_common(const Chain& chain, const Partition& partition, double theta, int trials) {
    if (partition.state_count() != chain.size()) throw Error(ErrorCode::BadPartition, "partition does not match the chain");
    if (!(theta > 0.0)) throw Error(ErrorCode::BadParams, "theta must be positive");
    if (trials < 1) throw Error(ErrorCode::BadParams, "trials must be positive");
}

std::uint64_t stream_index(std::size_t start_pos, int trial) {
    return (static_cast<std::uint64_t>(start_pos) << 32) | static_cast<std::uint64_t>(trial);
}

Vector point_mass(Index n, Index x) {
    Vector v = Vector::Zero(n);
    v(x) = 1.0;
    return v;
}

}  // namespace

T2Estimate estimate_T2(const Chain& chain, const ProbVector& pi, const Partition& partition, double theta, double t,
                       int trials, std::uint64_t seed, const SimOptions& options, double escape_delta) {
    check_common(chain, partition, theta, trials);
    if (!(t > 0.0)) throw Error(ErrorCode::BadParams, "t must be positive");
    T2Estimate out;
    out.starts = default_starts(pi, partition, options);
    const auto delta = partition.delta();
    const double horizon = std::max(t, escape_delta) * theta;
    for (std::size_t s = 0; s < out.starts.size(); ++s) {
        const Index start = out.starts[s];
        const int home = partition.valley_of(start);
        std::vector<double> occ(static_cast<std::size_t>(trials));
        std::vector<double> esc(static_cast<std::size_t>(trials));
        parallel_for(trials, options.jobs, [&](int i) {
            const Path path = simulate(chain, start, horizon, seed, stream_index(s, i));
            occ[static_cast<std::size_t>(i)] = occupation_time(path, delta, t * theta) / theta;
            double hit = 0.0;
            if (escape_delta > 0.0) {
                for (std::size_t k = 0; k < path.times.size() && path.times[k] <= escape_delta * theta; ++k) {
                    const int v = partition.valley_of(path.states[k]);
                    if (v >= 0 && v != home) {
                        hit = 1.0;
                        break;
                    }
                }
            }
            esc[static_cast<std::size_t>(i)] = hit;
        });
        out.occupation.push_back(summarize(occ));
        out.escape.push_back(summarize(esc));
        if (chain.size() <= kOracleLimit) {
            const auto prop = propagate(chain, point_mass(chain.size(), start), t * theta);
            double v = 0.0;
            for (Index x : delta) v += prop.integral(x);
            out.exact.emplace_back(v / theta);
        } else {
            out.exact.emplace_back(std::nullopt);
        }
        out.worst = std::max(out.worst, out.occupation.back().mean);
    }
    return out;
}

Estimate91 estimate_91(const Chain& chain, const ProbVector& pi, const Partition& partition, double theta,
                       double delta, int trials, std::uint64_t seed, const SimOptions& options) {
    check_common(chain, partition, theta, trials);
    if (!(delta > 0.0)) throw Error(ErrorCode::BadParams, "delta must be positive");
    constexpr int kGrid = 16;
    Estimate91 out;
    for (int i = 0; i < kGrid; ++i) out.grid.push_back(delta * (1.0 + static_cast<double>(i) / (kGrid - 1)));
    out.starts = default_starts(pi, partition, options);
    const auto dset = partition.delta();
    for (std::size_t s = 0; s < out.starts.size(); ++s) {
        const Index start = out.starts[s];
        std::vector<std::vector<double>> hits(kGrid, std::vector<double>(static_cast<std::size_t>(trials)));
        parallel_for(trials, options.jobs, [&](int i) {
            const Path path = simulate(chain, start, 2.0 * delta * theta, seed, stream_index(s, i));
            for (int g = 0; g < kGrid; ++g) {
                const Index x = path.state_at(out.grid[static_cast<std::size_t>(g)] * theta);
                hits[static_cast<std::size_t>(g)][static_cast<std::size_t>(i)] = partition.valley_of(x) < 0 ? 1.0 : 0.0;
            }
        });
        std::vector<Estimate> row;
        for (const auto& h : hits) {
            row.push_back(summarize(h));
            out.sup = std::max(out.sup, row.back().mean);
        }
        out.prob.push_back(std::move(row));
        if (chain.size() <= kOracleLimit) {
            std::vector<double> exact;
            Vector law = point_mass(chain.size(), start);
            double now = 0.0;
            for (double g : out.grid) {
                law = propagate(chain, law, g * theta - now).law;
                now = g * theta;
                double v = 0.0;
                for (Index x : dset) v += law(x);
                exact.push_back(v);
            }
            out.exact.push_back(std::move(exact));
        }
    }
    return out;
}

FddComparison fdd_compare(const Chain& chain, const Partition& partition, double theta, const ReducedModel& model,
                          std::span<const double> times, Index start, int trials, std::uint64_t seed, unsigned jobs) {
    check_common(chain, partition, theta, trials);
    if (model.valley_count != partition.valley_count()) {
        throw Error(ErrorCode::BadParams, "reduced model and partition differ in valley count");
    }
    if (start < 0 || start >= chain.size()) throw Error(ErrorCode::UnknownLabel, "start state out of range");
    const int home = partition.valley_of(start);
    if (home < 0) throw Error(ErrorCode::StartsInDelta, "fdd_compare needs a start inside a valley");
    std::vector<double> grid(times.begin(), times.end());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] >= 0.0) || (i > 0 && grid[i] < grid[i - 1])) {
            throw Error(ErrorCode::BadParams, "time grid must be nonnegative and nondecreasing");
        }
    }
    const auto n = static_cast<Index>(partition.valley_count());
    const double t_max = grid.empty() ? 0.0 : grid.back();

    // observed[i][g] = valley index at grid time g, or kDeltaSymbol
    std::vector<std::vector<Index>> observed(static_cast<std::size_t>(trials), std::vector<Index>(grid.size()));
    parallel_for(trials, jobs, [&](int i) {
        const Path path = t_max > 0.0 ? simulate(chain, start, t_max * theta, seed, stream_index(0, i))
                                      : Path{start, {}, {}, 0.0};
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const int v = partition.valley_of(path.state_at(grid[g] * theta));
            observed[static_cast<std::size_t>(i)][g] = v < 0 ? kDeltaSymbol : v;
        }
    });

    FddComparison out;
    out.start = start;
    out.start_valley = home;
    const Eigen::MatrixXd q = reduced_generator(model);
    const bool oracle = chain.size() <= kOracleLimit;
    Vector law = point_mass(chain.size(), start);
    double now = 0.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        FddRow row;
        row.t = grid[g];
        row.empirical = Vector::Zero(n);
        for (const auto& obs : observed) {
            if (obs[g] == kDeltaSymbol) {
                row.empirical_delta += 1.0;
            } else {
                row.empirical(obs[g]) += 1.0;
            }
        }
        row.empirical /= trials;
        row.empirical_delta /= trials;
        row.reduced = transition_matrix(q, row.t).row(home).transpose();
        row.tv_reduced = 0.5 * ((row.empirical - row.reduced).cwiseAbs().sum() + row.empirical_delta);

        Vector reference = row.empirical;
        double reference_delta = row.empirical_delta;
        if (oracle) {
            law = propagate(chain, law, row.t * theta - now).law;
            now = row.t * theta;
            row.has_oracle = true;
            row.oracle = Vector::Zero(n);
            for (Index x = 0; x < chain.size(); ++x) {
                const int v = partition.valley_of(x);
                if (v < 0) {
                    row.oracle_delta += law(x);
                } else {
                    row.oracle(v) += law(x);
                }
            }
            row.tv_oracle = 0.5 * ((row.empirical - row.oracle).cwiseAbs().sum() +
                                   std::abs(row.empirical_delta - row.oracle_delta));
            row.tv_exact = 0.5 * ((row.oracle - row.reduced).cwiseAbs().sum() + row.oracle_delta);
            reference = row.oracle;
            reference_delta = row.oracle_delta;
        }
        auto band = [&](double p) { return 3.0 * std::sqrt(std::max(0.0, p * (1.0 - p)) / trials); };
        for (Index k = 0; k < n; ++k) row.tv_noise += band(reference(k));
        row.tv_noise = 0.5 * (row.tv_noise + band(reference_delta));
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace metastab
