#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metastab/chain.hpp"

namespace metastab {

/// A built model: chain, its stationary law and default partition.
struct ModelSpec {
    std::string family;
    std::map<std::string, std::string> params;  // normalized parameter values
    Chain chain;
    ProbVector pi;                       // closed form, verified stationary
    std::optional<Partition> partition;  // default valleys
    std::optional<double> theta;         // suggested time scale
};

/// Four d-cubes {1..N}^d in a ring; corner (N,..,N) of cube k is glued to
/// corner (1,..,1) of cube k+1 mod 4. Unit-rate exponential clock, uniform
/// neighbor. Valley k: points of cube k with every coordinate in
/// [ell+1, N-ell]. Labels "k<cube>_<x1>_<x2>..."; a glued point carries the
/// label of the lower-indexed cube.
ModelSpec glued_cubes(int d, int n, int ell);

/// g(k) of the zero-range model: g(0)=0, g(1)=1, g(n) = (n/(n-1))^alpha.
double zero_range_g(int k, double alpha);

/// Nearest-neighbor zero-range process with N particles on the L-torus.
/// Rates g(eta_x) p to the right and g(eta_x)(1-p) to the left. Valleys
/// {eta_x >= N - ell}. ell = 0 picks ceil(sqrt N), reduced when needed to
/// keep the valleys disjoint. Labels "<eta_0>_<eta_1>_...".
ModelSpec zero_range(int l, int n, double alpha, double p, int ell = 0);

struct Grid {
    int dim = 1;           // 1 or 2
    int points = 21;       // per axis
    double lo = -2.0;
    double hi = 2.0;

    [[nodiscard]] int size() const { return dim == 1 ? points : points * points; }
    [[nodiscard]] double coord(int i) const { return lo + (hi - lo) * i / (points - 1); }
};

using PotentialFn = std::function<double(double, double)>;

/// Random walk in the potential F: rate exp(-(N/2)(F(y) - F(x))) between
/// grid neighbors, reversible for exp(-N F). Valleys are the connected
/// components of {F < H - eps} holding a strict local minimum, with H the
/// lowest level at which two minima connect. Labels "i<i>" or "i<i>_<j>".
ModelSpec potential_rw(const Grid& grid, const PotentialFn& f, double n, double eps = 0.1);

/// Named potentials usable from model strings: double_well, flat, tilted_well,
/// four_well.
PotentialFn named_potential(const std::string& name);

/// Parses "family:key=value,..." and builds the model. Throws ParseError on
/// malformed strings or unknown keys, BadParams on invalid values.
ModelSpec parse_model(const std::string& text);

}  // namespace metastab
