#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "metastab/chain.hpp"
#include "metastab/reduction.hpp"

namespace metastab {

/// Right-continuous piecewise-constant trajectory on [0, horizon].
struct Path {
    Index initial = 0;
    std::vector<double> times;   // jump times, strictly increasing in (0, horizon]
    std::vector<Index> states;   // state entered at times[i]
    double horizon = 0.0;

    [[nodiscard]] std::size_t jump_count() const noexcept { return times.size(); }
    /// State at time t; the last state is held beyond the horizon.
    [[nodiscard]] Index state_at(double t) const;
    /// Start of the i-th sojourn (0 for the initial state).
    [[nodiscard]] double sojourn_start(std::size_t i) const { return i == 0 ? 0.0 : times[i - 1]; }
    [[nodiscard]] double sojourn_end(std::size_t i) const { return i < times.size() ? times[i] : horizon; }
    [[nodiscard]] Index sojourn_state(std::size_t i) const { return i == 0 ? initial : states[i - 1]; }

    /// Throws InvalidPath unless the invariants hold.
    void validate() const;

    friend bool operator==(const Path&, const Path&) = default;
};

/// Coarse paths are Paths over valley indices 0..n-1 plus kDeltaSymbol.
using CoarsePath = Path;
inline constexpr Index kDeltaSymbol = -1;

/// Per-trajectory random stream: mt19937_64 seeded from splitmix64 of
/// (seed, index), so trial i is the same whatever the scheduling.
std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t index);

/// Exact CTMC sampling up to `horizon`.
Path simulate(const Chain& chain, Index start, double horizon, std::mt19937_64& rng);
Path simulate(const Chain& chain, Index start, double horizon, std::uint64_t seed, std::uint64_t index = 0);
Path simulate(const Chain& chain, const ProbVector& start, double horizon, std::uint64_t seed,
              std::uint64_t index = 0);

/// Time spent in F during [0, min(t, horizon)].
double occupation_time(const Path& path, std::span<const Index> f);
double occupation_time(const Path& path, std::span<const Index> f, double t);

/// Generalized inverse S_F of the additive functional T_F.
class TimeChange {
public:
    TimeChange(const Path& path, std::span<const Index> f);

    /// S_F(u) for u in [0, total()); right-continuous.
    [[nodiscard]] double operator()(double u) const;
    /// T_F(t).
    [[nodiscard]] double occupation(double t) const;
    [[nodiscard]] double total() const noexcept { return total_; }

private:
    std::vector<double> starts_;  // real start of each F-sojourn
    std::vector<double> offset_;  // trace time at each start
    std::vector<double> length_;
    double total_ = 0.0;
};

/// eta(S_F(t)): the F-sojourns concatenated, consecutive repeats merged.
/// Throws InvalidPath when the path never spends time in F.
Path trace_path(const Path& path, std::span<const Index> f);

/// Replaces every kDeltaSymbol interval by the preceding valley value.
/// Throws StartsInDelta.
CoarsePath last_passage_path(const CoarsePath& path);

enum class Projection { Phi, Psi };

/// Phi maps Delta states to kDeltaSymbol; Psi throws InvalidPath on Delta.
CoarsePath project(const Path& path, const Partition& partition, Projection mode);

/// Sum_{m <= m_max} 2^-m min(1, d_m) with valleys 0, 1, 2, 3, ... at
/// heights 1, -1, 2, -2, ... and Delta at 0. d_m is minimized over piecewise-linear time changes whose nodes
/// pair up jump times of the two paths, so the value is an upper bound of
/// the metric. Paths are held constant beyond their horizons.
double skorohod_distance(const CoarsePath& a, const CoarsePath& b, int m_max = 8);

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
};

struct SimOptions {
    unsigned jobs = 1;
    std::vector<Index> starts;  // default: pi-maximal state of every valley
};

struct T2Estimate {
    std::vector<Index> starts;
    std::vector<Estimate> occupation;             // E int_0^t chi_Delta(eta(s theta)) ds
    std::vector<std::optional<double>> exact;     // semigroup integral when the chain is small
    std::vector<Estimate> escape;                 // P[H(other valleys) <= escape_delta theta]
    double worst = 0.0;
};

T2Estimate estimate_T2(const Chain& chain, const ProbVector& pi, const Partition& partition, double theta,
                       double t, int trials, std::uint64_t seed, const SimOptions& options = {},
                       double escape_delta = 0.0);

struct Estimate91 {
    std::vector<double> grid;                     // 16 points in [delta, 2 delta]
    std::vector<Index> starts;
    std::vector<std::vector<Estimate>> prob;      // [start][grid point]
    std::vector<std::vector<double>> exact;       // empty when the chain is large
    double sup = 0.0;
};

Estimate91 estimate_91(const Chain& chain, const ProbVector& pi, const Partition& partition, double theta,
                       double delta, int trials, std::uint64_t seed, const SimOptions& options = {});

struct FddRow {
    double t = 0.0;
    Vector empirical;        // law of Phi(eta(t theta)) on the valleys
    double empirical_delta = 0.0;
    Vector reduced;          // row of exp(t Q) of the reduced model
    Vector oracle;           // exact projected law, when available
    double oracle_delta = 0.0;
    double tv_reduced = 0.0; // empirical vs reduced model
    double tv_oracle = 0.0;  // empirical vs exact oracle
    double tv_exact = 0.0;   // exact oracle vs reduced model
    double tv_noise = 0.0;   // 3 sigma Monte-Carlo band on the empirical law
    bool has_oracle = false;
};

struct FddComparison {
    Index start = 0;
    int start_valley = 0;
    std::vector<FddRow> rows;
};

/// Exact oracles are used when the chain has at most kOracleLimit states.
inline constexpr Index kOracleLimit = 2000;

FddComparison fdd_compare(const Chain& chain, const Partition& partition, double theta, const ReducedModel& model,
                          std::span<const double> times, Index start, int trials, std::uint64_t seed,
                          unsigned jobs = 1);

}  // namespace metastab
