// metastab command-line front end.
//
//   metastab analyze  (--spec FILE | --model STRING) [--partition FILE] [--theta X] [--out FILE]
//   metastab simulate (--spec | --model) [--start LABEL] [--horizon T] [--trials K] [--seed S]
//                     [--surgery none|trace|last_passage] [--jobs J] [--out DIR]
//   metastab validate (--spec | --model) [--grid T1,T2,...] [--trials K] [--seed S] [--jobs J] [--out FILE]
//   metastab cycles   (--spec | --model) [--out FILE]
//
// Exit codes: 0 ok, 2 input error, 3 resource guard, 4 numerical failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "metastab/io.hpp"
#include "metastab/models.hpp"
#include "metastab/pathsim.hpp"
#include "metastab/reduction.hpp"
#include "metastab/transforms.hpp"

#ifndef METASTAB_VERSION
#define METASTAB_VERSION "0.0.0"
#endif

using json = nlohmann::json;
using namespace metastab;

namespace {

constexpr const char* kSchemaId = "metastab-report/1";
constexpr double kIdentityTol = 1e-9;

struct InputFlags {
    std::string spec;
    std::string model;
    std::string partition;
    std::optional<double> theta;
    std::string out;
};

struct Input {
    std::string kind;    // "spec" or "model"
    std::string source;  // file path or model string
    Chain chain;
    ProbVector pi;
    std::optional<Partition> partition;
    std::optional<double> theta_hint;
};

Error input_error(const std::string& message) { return Error(ErrorCode::BadParams, message); }

Input load(const InputFlags& flags) {
    if (flags.spec.empty() == flags.model.empty()) throw input_error("exactly one of --spec and --model is required");
    std::optional<Input> in;
    if (!flags.spec.empty()) {
        auto spec = parse_chain_spec(read_file(flags.spec));
        auto pi = stationary(spec.chain);
        in.emplace(Input{"spec", flags.spec, std::move(spec.chain), std::move(pi), std::move(spec.partition), {}});
    } else {
        auto m = parse_model(flags.model);
        in.emplace(Input{"model", flags.model, std::move(m.chain), std::move(m.pi), std::move(m.partition), m.theta});
    }
    if (!flags.partition.empty()) in->partition = parse_partition(in->chain, read_file(flags.partition));
    return std::move(*in);
}

const Partition& require_partition(const Input& in) {
    if (!in.partition) throw Error(ErrorCode::BadPartition, "partition required");
    in.partition->require_reducible();
    return *in.partition;
}

json vec(const Vector& v) {
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json labels_of(const Chain& chain, std::span<const Index> states) {
    json out = json::array();
    for (Index x : states) out.push_back(chain.label(x));
    return out;
}

json header(const std::string& command, const Input& in) {
    json input = {{"kind", in.kind},
                  {"source", in.source},
                  {"fingerprint", fingerprint(in.chain, in.partition)},
                  {"states", in.chain.size()},
                  {"edges", in.chain.edge_count()}};
    return {{"schema", kSchemaId}, {"tool", "metastab"}, {"version", METASTAB_VERSION}, {"command", command},
            {"input", std::move(input)}};
}

Index pi_max_state(const ProbVector& pi, std::span<const Index> states) {
    Index best = states.front();
    for (Index x : states) {
        if (pi[x] > pi[best]) best = x;
    }
    return best;
}

json stationary_section(const Input& in) {
    json s = json::object();
    Index best = 0;
    for (Index x = 1; x < in.chain.size(); ++x) {
        if (in.pi[x] > in.pi[best]) best = x;
    }
    s["max_state"] = in.chain.label(best);
    s["max_mass"] = in.pi[best];
    if (in.chain.size() <= 1000) {
        json values = json::object();
        for (Index x = 0; x < in.chain.size(); ++x) values[in.chain.label(x)] = in.pi[x];
        s["values"] = std::move(values);
    }
    if (in.partition) {
        json masses = json::array();
        for (const auto& v : in.partition->valleys()) masses.push_back(in.pi.mass(v));
        s["valley_mass"] = std::move(masses);
        s["delta_mass"] = in.pi.mass(in.partition->delta());
    }
    return s;
}

double resolve_theta(const InputFlags& flags, const Input& in, const Partition& p, std::string& source) {
    if (flags.theta) {
        if (!(*flags.theta > 0.0) || !std::isfinite(*flags.theta)) throw input_error("--theta must be positive");
        source = "flag";
        return *flags.theta;
    }
    if (in.theta_hint) {
        source = "model";
        return *in.theta_hint;
    }
    source = "min_timescale";
    return timescales(in.chain, in.pi, p).values.minCoeff();
}

json off_diagonal(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Index j = 0; j < m.rows(); ++j) {
        json row = json::array();
        for (Index k = 0; k < m.cols(); ++k) row.push_back(j == k ? json(nullptr) : json(m(j, k)));
        out.push_back(std::move(row));
    }
    return out;
}

json cmd_analyze(const InputFlags& flags) {
    const Input in = load(flags);
    const Partition& p = require_partition(in);
    std::string theta_source;
    const double theta = resolve_theta(flags, in, p, theta_source);
    const auto model = coarse_rates(in.chain, in.pi, p, theta);
    const auto ts = timescales(in.chain, in.pi, p);
    const auto n = static_cast<Index>(p.valley_count());

    Eigen::MatrixXd jumps = Eigen::MatrixXd::Zero(n, n);
    double jump_check = 0.0;
    for (Index j = 0; j < n; ++j) {
        jumps.row(j) = jump_probabilities(in.chain, in.pi, p, static_cast<std::size_t>(j)).transpose();
        for (Index k = 0; k < n; ++k) {
            if (k == j) continue;
            // relative to the holding rate of the row
            jump_check = std::max(jump_check,
                                  std::abs(model.rates(j, k) - model.holding(j) * jumps(j, k)) / model.holding(j));
        }
    }

    json report = header("analyze", in);
    report["stationary"] = stationary_section(in);

    json caps = json::array();
    for (Index j = 0; j < n; ++j) {
        caps.push_back({{"valley", j},
                        {"capacity", model.capacities(j)},
                        {"mass", model.valley_mass(j)},
                        {"timescale", ts.values(j)}});
    }
    report["capacities"] = {{"valleys", std::move(caps)}, {"timescale_spread", ts.spread}};

    json valleys = json::array();
    for (std::size_t j = 0; j < p.valley_count(); ++j) valleys.push_back(labels_of(in.chain, p.valley(j)));
    report["reduced_model"] = {{"valleys", std::move(valleys)},
                               {"delta", labels_of(in.chain, p.delta())},
                               {"theta", theta},
                               {"theta_source", theta_source},
                               {"rates", off_diagonal(model.rates)},
                               {"holding", vec(model.holding)},
                               {"jump_probabilities", off_diagonal(jumps)},
                               {"identity_residual", model.identity_residual},
                               {"identity_check", model.identity_residual <= kIdentityTol ? "pass" : "fail"},
                               {"jump_residual", jump_check},
                               {"jump_check", jump_check <= kIdentityTol ? "pass" : "fail"}};

    const auto cond = check_conditions(in.chain, in.pi, p, model);
    json relax = json::array();
    json mixing = json::array();
    for (const auto& r : cond.relaxation_ratio) relax.push_back(opt(r));
    for (const auto& m : cond.mixing_composite) mixing.push_back(opt(m));
    report["conditions"] = {{"theta", cond.theta},
                            {"reference_states", cond.reference_states},
                            {"capacity_ratio", cond.capacity_ratio},
                            {"delta_ratio", cond.delta_ratio},
                            {"delta_state_ratio", cond.delta_state_ratio},
                            {"delta_rate_ratio", cond.delta_rate_ratio},
                            {"relaxation_ratio", std::move(relax)},
                            {"mixing_composite", std::move(mixing)}};
    return report;
}

json cmd_cycles(const InputFlags& flags) {
    const Input in = load(flags);
    const auto dec = cycle_decompose(in.chain, in.pi);
    json list = json::array();
    for (const auto& c : dec.cycles) {
        list.push_back({{"states", labels_of(in.chain, c.vertices)}, {"rates", c.rates}, {"conductance", c.conductance}});
    }
    json report = header("cycles", in);
    report["cycles"] = {{"count", dec.cycles.size()},
                        {"residual", dec.reconstruction_residual},
                        {"stationarity_deviation", dec.stationarity_deviation},
                        {"list", std::move(list)}};
    return report;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || !(v > 0.0) || !std::isfinite(v)) {
            throw Error(ErrorCode::ParseError, "--grid expects positive numbers separated by commas, got '" + text + "'");
        }
        out.push_back(v);
    }
    if (out.empty()) throw Error(ErrorCode::ParseError, "--grid is empty");
    return out;
}

json estimate_json(const Estimate& e) { return {{"mean", e.mean}, {"std_error", e.std_error}}; }

struct ValidateFlags {
    std::string grid = "0.5,1,2";
    int trials = 10000;
    std::uint64_t seed = 1;
    unsigned jobs = 1;
};

json cmd_validate(const InputFlags& flags, const ValidateFlags& v) {
    const Input in = load(flags);
    const Partition& p = require_partition(in);
    if (v.trials < 1) throw input_error("--trials must be positive");
    if (v.jobs < 1) throw input_error("--jobs must be positive");
    const auto grid = parse_grid(v.grid);
    std::string theta_source;
    const double theta = resolve_theta(flags, in, p, theta_source);
    const auto model = coarse_rates(in.chain, in.pi, p, theta);

    json fdd = json::array();
    double max_oracle = 0.0;
    double max_reduced = 0.0;
    double max_exact = 0.0;
    bool have_oracle = false;
    for (std::size_t j = 0; j < p.valley_count(); ++j) {
        const Index start = pi_max_state(in.pi, p.valley(j));
        const auto cmp = fdd_compare(in.chain, p, theta, model, grid, start, v.trials, v.seed + j, v.jobs);
        json rows = json::array();
        for (const auto& r : cmp.rows) {
            json row = {{"t", r.t},
                        {"empirical", vec(r.empirical)},
                        {"empirical_delta", r.empirical_delta},
                        {"reduced", vec(r.reduced)},
                        {"tv_reduced", r.tv_reduced},
                        {"tv_noise", r.tv_noise}};
            max_reduced = std::max(max_reduced, r.tv_reduced);
            if (r.has_oracle) {
                have_oracle = true;
                row["oracle"] = vec(r.oracle);
                row["oracle_delta"] = r.oracle_delta;
                row["tv_oracle"] = r.tv_oracle;
                row["tv_exact"] = r.tv_exact;
                max_oracle = std::max(max_oracle, r.tv_oracle);
                max_exact = std::max(max_exact, r.tv_exact);
            }
            rows.push_back(std::move(row));
        }
        fdd.push_back({{"start", in.chain.label(start)}, {"start_valley", cmp.start_valley}, {"rows", std::move(rows)}});
    }

    SimOptions options;
    options.jobs = v.jobs;
    const double t2_time = *std::max_element(grid.begin(), grid.end());
    const auto t2 = estimate_T2(in.chain, in.pi, p, theta, t2_time, v.trials, v.seed, options);
    json occ = json::array();
    json exact = json::array();
    for (const auto& e : t2.occupation) occ.push_back(estimate_json(e));
    for (const auto& e : t2.exact) exact.push_back(opt(e));

    const double delta = grid.front();
    const auto e91 = estimate_91(in.chain, in.pi, p, theta, delta, v.trials, v.seed, options);
    json prob = json::array();
    for (const auto& row : e91.prob) {
        json r = json::array();
        for (const auto& e : row) r.push_back(estimate_json(e));
        prob.push_back(std::move(r));
    }

    json report = header("validate", in);
    report["reduced_model"] = {{"theta", theta},
                               {"theta_source", theta_source},
                               {"rates", off_diagonal(model.rates)},
                               {"holding", vec(model.holding)},
                               {"identity_residual", model.identity_residual},
                               {"identity_check", model.identity_residual <= kIdentityTol ? "pass" : "fail"}};
    report["validation"] = {
        {"theta", theta},
        {"trials", v.trials},
        {"seed", v.seed},
        {"grid", grid},
        {"fdd", std::move(fdd)},
        {"max_tv_reduced", max_reduced},
        {"max_tv_oracle", have_oracle ? json(max_oracle) : json(nullptr)},
        {"max_tv_exact", have_oracle ? json(max_exact) : json(nullptr)},
        {"t2",
         {{"t", t2_time},
          {"starts", labels_of(in.chain, t2.starts)},
          {"occupation", std::move(occ)},
          {"exact", std::move(exact)},
          {"worst", t2.worst}}},
        {"delta_probability",
         {{"delta", delta},
          {"grid", e91.grid},
          {"starts", labels_of(in.chain, e91.starts)},
          {"prob", std::move(prob)},
          {"sup", e91.sup}}}};
    return report;
}

struct SimulateFlags {
    std::string start;
    double horizon = 10.0;
    int trials = 1;
    std::uint64_t seed = 0;
    std::string surgery = "none";
    unsigned jobs = 1;
};

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_csv(const std::filesystem::path& file, const Path& path, const std::function<std::string(Index)>& name) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw input_error("cannot write '" + file.string() + "'");
    out << "time,state\n" << "0," << name(path.initial) << '\n';
    for (std::size_t i = 0; i < path.times.size(); ++i) out << fmt(path.times[i]) << ',' << name(path.states[i]) << '\n';
}

json cmd_simulate(const InputFlags& flags, const SimulateFlags& s) {
    const Input in = load(flags);
    if (s.trials < 1) throw input_error("--trials must be positive");
    if (s.jobs < 1) throw input_error("--jobs must be positive");
    if (!(s.horizon > 0.0) || !std::isfinite(s.horizon)) throw input_error("--horizon must be positive");
    if (s.surgery != "none" && s.surgery != "trace" && s.surgery != "last_passage") {
        throw input_error("--surgery must be none, trace or last_passage");
    }
    const Partition* p = nullptr;
    if (s.surgery != "none") p = &require_partition(in);
    else if (in.partition) p = &*in.partition;

    Index start = 0;
    if (!s.start.empty()) {
        const auto found = in.chain.find(s.start);
        if (!found) throw Error(ErrorCode::UnknownLabel, "unknown start state '" + s.start + "'");
        start = *found;
    } else if (p != nullptr) {
        start = pi_max_state(in.pi, p->valley(0));
    }
    if (s.surgery == "last_passage" && p->valley_of(start) < 0) {
        throw Error(ErrorCode::StartsInDelta, "last-passage surgery needs a start state inside a valley");
    }

    const auto count = static_cast<std::size_t>(s.trials);
    std::vector<Path> paths(count);
    {
        const unsigned jobs = std::min<unsigned>(s.jobs, static_cast<unsigned>(count));
        std::vector<std::thread> workers;
        for (unsigned w = 0; w < jobs; ++w) {
            workers.emplace_back([&, w] {
                for (std::size_t i = w * count / jobs; i < (w + 1) * count / jobs; ++i) {
                    paths[i] = simulate(in.chain, start, s.horizon, s.seed, i);
                }
            });
        }
        for (auto& t : workers) t.join();
    }

    const std::filesystem::path dir = flags.out.empty() ? std::filesystem::path("metastab_paths") : std::filesystem::path(flags.out);
    std::filesystem::create_directories(dir);
    auto micro_name = [&](Index x) { return in.chain.label(x); };
    auto valley_name = [](Index v) { return v == kDeltaSymbol ? std::string("Delta") : "E" + std::to_string(v + 1); };

    const std::vector<Index> valley_union = p != nullptr ? p->valley_union() : std::vector<Index>{};
    const auto n = p != nullptr ? static_cast<Index>(p->valley_count()) : 0;
    Vector occupation = Vector::Zero(n);
    double delta_occupation = 0.0;
    Eigen::MatrixXd coarse_jumps = Eigen::MatrixXd::Zero(n, n);
    std::size_t micro_jumps = 0;
    json files = json::array();

    for (std::size_t i = 0; i < count; ++i) {
        const Path& path = paths[i];
        micro_jumps += path.jump_count();
        char name[32];
        std::snprintf(name, sizeof name, "path_%04zu.csv", i);
        files.push_back(name);
        if (p != nullptr) {
            for (Index j = 0; j < n; ++j) occupation(j) += occupation_time(path, p->valley(j)) / s.horizon;
            delta_occupation += occupation_time(path, p->delta()) / s.horizon;
            if (occupation_time(path, valley_union) > 0.0) {
                const auto coarse = project(trace_path(path, valley_union), *p, Projection::Psi);
                Index prev = coarse.initial;
                for (Index v : coarse.states) {
                    coarse_jumps(prev, v) += 1.0;
                    prev = v;
                }
            }
        }
        if (s.surgery == "none") {
            write_csv(dir / name, path, micro_name);
        } else if (s.surgery == "trace") {
            write_csv(dir / name, project(trace_path(path, valley_union), *p, Projection::Psi), valley_name);
        } else {
            write_csv(dir / name, last_passage_path(project(path, *p, Projection::Phi)), valley_name);
        }
    }

    json summary = header("simulate", in);
    json sim = {{"start", in.chain.label(start)},
                {"horizon", s.horizon},
                {"trials", s.trials},
                {"seed", s.seed},
                {"surgery", s.surgery},
                {"directory", dir.string()},
                {"files", std::move(files)},
                {"mean_jumps", static_cast<double>(micro_jumps) / static_cast<double>(count)}};
    if (p != nullptr) {
        sim["occupation"] = {{"valleys", vec(occupation / static_cast<double>(count))},
                             {"delta", delta_occupation / static_cast<double>(count)}};
        json jumps = json::array();
        for (Index j = 0; j < n; ++j) {
            json row = json::array();
            for (Index k = 0; k < n; ++k) row.push_back(static_cast<long long>(coarse_jumps(j, k)));
            jumps.push_back(std::move(row));
        }
        sim["coarse_jumps"] = std::move(jumps);
    }
    summary["simulation"] = std::move(sim);
    std::ofstream out(dir / "summary.json", std::ios::binary);
    out << summary.dump(2) << '\n';
    return summary;
}

int exit_code_for(ErrorCode code) {
    if (is_resource_guard(code)) return 3;
    if (is_numerical_failure(code)) return 4;
    return 2;
}

int fail(ErrorCode code, const std::string& message) {
    const int exit_code = exit_code_for(code);
    const json err = {{"error", {{"code", std::string(to_string(code))}, {"message", message}}},
                      {"exit_code", exit_code}};
    std::cout << err.dump(2) << '\n';
    std::cerr << "metastab: " << message << '\n';
    return exit_code;
}

void emit(const json& report, const std::string& out) {
    const std::string text = report.dump(2) + "\n";
    if (out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) throw input_error("cannot write '" + out + "'");
    f << text;
}

void add_input_flags(CLI::App* cmd, InputFlags& flags, bool with_partition) {
    cmd->add_option("--spec", flags.spec, "chain-spec JSON file");
    cmd->add_option("--model", flags.model, "model string, e.g. glued_cubes:d=2,N=8,ell=2");
    if (with_partition) {
        cmd->add_option("--partition", flags.partition, "partition JSON file (overrides the inline one)");
        cmd->add_option("--theta", flags.theta, "time scale");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Metastable reduction of finite continuous-time Markov chains"};
    app.set_version_flag("--version", std::string(METASTAB_VERSION));
    app.require_subcommand(1);

    InputFlags analyze_flags, simulate_flags, validate_flags, cycles_flags;
    SimulateFlags sim;
    ValidateFlags val;

    auto* analyze = app.add_subcommand("analyze", "reduced model, time scales and condition ratios");
    add_input_flags(analyze, analyze_flags, true);
    analyze->add_option("--out", analyze_flags.out, "report file (default: stdout)");

    auto* simulate_cmd = app.add_subcommand("simulate", "sample trajectories to CSV");
    add_input_flags(simulate_cmd, simulate_flags, true);
    simulate_cmd->add_option("--start", sim.start, "start state label");
    simulate_cmd->add_option("--horizon", sim.horizon, "time horizon in chain time");
    simulate_cmd->add_option("--trials", sim.trials, "number of trajectories");
    simulate_cmd->add_option("--seed", sim.seed, "random seed");
    simulate_cmd->add_option("--surgery", sim.surgery, "none, trace or last_passage");
    simulate_cmd->add_option("--jobs", sim.jobs, "worker threads");
    simulate_cmd->add_option("--out", simulate_flags.out, "output directory");

    auto* validate = app.add_subcommand("validate", "simulation check of the reduced model");
    add_input_flags(validate, validate_flags, true);
    validate->add_option("--grid", val.grid, "comparison times in units of theta");
    validate->add_option("--trials", val.trials, "trajectories per start state");
    validate->add_option("--seed", val.seed, "random seed");
    validate->add_option("--jobs", val.jobs, "worker threads");
    validate->add_option("--out", validate_flags.out, "report file (default: stdout)");

    auto* cycles = app.add_subcommand("cycles", "cycle decomposition of the generator");
    add_input_flags(cycles, cycles_flags, false);
    cycles->add_option("--out", cycles_flags.out, "report file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << app.help() << '\n';
        return fail(ErrorCode::ParseError, e.what());
    }

    try {
        if (analyze->parsed()) emit(cmd_analyze(analyze_flags), analyze_flags.out);
        else if (simulate_cmd->parsed()) std::cout << cmd_simulate(simulate_flags, sim).dump(2) << '\n';
        else if (validate->parsed()) emit(cmd_validate(validate_flags, val), validate_flags.out);
        else if (cycles->parsed()) emit(cmd_cycles(cycles_flags), cycles_flags.out);
    } catch (const Error& e) {
        return fail(e.code(), e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(ErrorCode::BadParams, e.what());
    } catch (const std::bad_alloc&) {
        return fail(ErrorCode::TooLarge, "out of memory");
    }
    return 0;
}
