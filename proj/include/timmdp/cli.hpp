#pragma once

#include "baselines.hpp"
#include "crg.hpp"
#include "domains.hpp"
#include "errors.hpp"
#include "formats.hpp"
#include "model.hpp"
#include "search.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <new>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace timmdp::cli {

enum ExitCode : int { ok = 0, failure = 1, usage = 2, invalid = 3, timeout = 4, resource = 5 };

// Raised for unreadable or unwritable files; reported as a usage error.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out || !(out << text))
        throw IoError("cannot write " + path.string());
}

inline std::string format_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Reads and validates; violations go to `err`. Returns nullopt when the
// instance has errors.
inline std::optional<Instance> load_instance(const std::string& path, std::ostream& err) {
    Instance m = read_instance(read_file(path));
    const auto violations = validate_instance(m);
    for (const auto& v : violations)
        err << (v.severity == Violation::Severity::error ? "error: " : "warning: ") << v.subject << ": " << v.message
            << '\n';
    if (has_errors(violations))
        return std::nullopt;
    return m;
}

struct RunOutcome {
    ResultRow row;
    Policy policy;
};

inline std::optional<std::chrono::milliseconds> budget(std::optional<double> seconds) {
    if (!seconds)
        return std::nullopt;
    return std::chrono::milliseconds(static_cast<long long>(*seconds * 1000.0));
}

// Solves with one algorithm; timeouts and resource exhaustion become row
// statuses.
inline RunOutcome run_algorithm(const Instance& m, const std::string& instance_id, const std::string& algorithm,
                                std::optional<double> time_limit, bool memo, BuildOptions build = {}) {
    RunOutcome out;
    out.row.instance = instance_id;
    out.row.algorithm = algorithm;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    };
    try {
        if (algorithm == "dp") {
            DpOptions options;
            options.time_budget = budget(time_limit);
            auto result = dp_solve(m, options);
            out.row.value = result.value;
            out.row.joint_actions_evaluated = result.stats.joint_actions_evaluated;
            out.policy = std::move(result.policy);
        } else {
            SearchConfig cfg;
            cfg.pruning = algorithm == "core";
            cfg.memoization = memo;
            cfg.time_budget = budget(time_limit);
            auto report = core_solve(m, cfg, build);
            out.row.joint_actions_evaluated = report.stats.joint_actions_evaluated;
            out.row.nodes_pruned = report.stats.nodes_pruned;
            out.row.decouple_events = report.stats.decouple_events;
            if (!report.complete) {
                out.row.status = ResultRow::Status::timeout;
            } else {
                out.row.value = report.value;
                out.policy = std::move(report.policy);
            }
        }
    } catch (const TimeoutError&) {
        out.row.status = ResultRow::Status::timeout;
    } catch (const ResourceError&) {
        out.row.status = ResultRow::Status::resource;
    } catch (const std::bad_alloc&) {
        out.row.status = ResultRow::Status::resource;
    }
    if (out.row.status != ResultRow::Status::solved)
        out.row.value.reset();
    out.row.wall_time_ms = elapsed();
    return out;
}

struct GenerateArgs {
    std::string family;
    std::optional<int> n, tasks, horizon;
    std::optional<double> density;
    std::uint64_t seed = 0;
    int count = 1;
    std::string out;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& out) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec)
        throw IoError("cannot create " + a.out + ": " + ec.message());
    auto emit = [&](const std::string& name, const Instance& m) {
        const fs::path path = fs::path(a.out) / name;
        write_file(path, write_instance(m));
        out << path.string() << '\n';
    };
    if (a.family == "example") {
        emit("example_two_agent.json", example_two_agent());
        return ok;
    }
    for (int k = 0; k < a.count; ++k) {
        const std::uint64_t seed = derive_stream_seed(a.seed, static_cast<std::uint64_t>(k));
        const std::string name = a.family + "_" + std::to_string(k) + ".json";
        Instance m;
        if (a.family == "mpp") {
            MppParams p;
            p.agents = a.n.value_or(p.agents);
            p.tasks = a.tasks.value_or(p.tasks);
            p.horizon = a.horizon.value_or(p.horizon);
            p.density = a.density.value_or(p.density);
            p.seed = seed;
            m = compile_mpp(gen_random_mpp(p));
        } else if (a.family == "pyra") {
            m = compile_mpp(gen_pyra(a.n.value_or(3), a.horizon.value_or(3), seed, a.tasks.value_or(1)));
        } else if (a.family == "coordint") {
            m = compile_mpp(gen_coordint(seed));
        } else {
            RandomInstanceParams p;
            if (a.n)
                p.min_agents = p.max_agents = *a.n;
            if (a.horizon)
                p.max_horizon = *a.horizon;
            p.seed = seed;
            m = gen_random_instance(p);
        }
        emit(name, m);
    }
    return ok;
}

struct SolveArgs {
    std::string algorithm;
    std::string instance;
    std::optional<double> time_limit;
    bool memo = false;
    bool expected_bounds = false;
    std::string stats;
    std::string policy_out;
};

inline int cmd_solve(const SolveArgs& a, std::ostream& out, std::ostream& err) {
    const auto m = load_instance(a.instance, err);
    if (!m)
        return invalid;
    BuildOptions build;
    if (a.expected_bounds)
        build.bounds = BoundRule::expected;
    auto run = run_algorithm(*m, std::filesystem::path(a.instance).stem().string(), a.algorithm, a.time_limit, a.memo,
                             build);
    if (!a.stats.empty())
        write_file(a.stats, write_results({run.row}));
    switch (run.row.status) {
    case ResultRow::Status::timeout:
        err << "time limit exceeded\n";
        return timeout;
    case ResultRow::Status::resource:
        err << "resource limit exceeded\n";
        return resource;
    case ResultRow::Status::solved:
        break;
    }
    if (!a.policy_out.empty())
        write_file(a.policy_out, write_policy(run.policy));
    out << "value " << format_value(*run.row.value) << '\n';
    return ok;
}

inline int cmd_evaluate(const std::string& instance, const std::string& policy, std::ostream& out,
                        std::ostream& err) {
    const auto m = load_instance(instance, err);
    if (!m)
        return invalid;
    const Policy pi = read_policy(read_file(policy));
    out << "value " << format_value(evaluate_policy(*m, pi)) << '\n';
    return ok;
}

inline int cmd_export_dot(const std::string& instance, std::optional<int> agent, const std::string& policy,
                          bool bounds, std::ostream& out, std::ostream& err) {
    const auto m = load_instance(instance, err);
    if (!m)
        return invalid;
    if (!policy.empty()) {
        out << export_policy_dot(*m, read_policy(read_file(policy)));
        return ok;
    }
    if (!agent || *agent < 0 || *agent >= m->num_agents()) {
        err << "--agent must name an agent between 0 and " << m->num_agents() - 1 << '\n';
        return usage;
    }
    const auto g = build_crg(*m, default_partition(*m), *agent);
    out << export_dot(g, {bounds});
    return ok;
}

struct BenchArgs {
    std::string instances;
    std::vector<std::string> algorithms;
    double time_limit = 60.0;
    std::string out;
    int jobs = 1;
    bool memo = false;
    bool expected_bounds = false;
};

inline int cmd_bench(const BenchArgs& a, std::ostream& err) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(a.instances))
        throw IoError("not a directory: " + a.instances);
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.instances))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());

    std::vector<std::pair<std::string, Instance>> instances;
    bool bad = false;
    for (const auto& f : files) {
        std::ostringstream diag;
        std::optional<Instance> m;
        try {
            m = load_instance(f.string(), diag);
        } catch (const SchemaError& e) {
            diag << "error: " << e.what() << '\n';
        }
        if (!m) {
            err << f.string() << ":\n" << diag.str();
            bad = true;
            continue;
        }
        instances.emplace_back(f.stem().string(), std::move(*m));
    }
    if (bad)
        return invalid;

    struct Job {
        std::size_t instance;
        std::string algorithm;
    };
    std::vector<Job> jobs;
    for (std::size_t k = 0; k < instances.size(); ++k)
        for (const auto& alg : a.algorithms)
            jobs.push_back({k, alg});
    std::vector<ResultRow> rows(jobs.size());
    std::atomic<std::size_t> next{0};
    std::mutex log;
    BuildOptions build;
    if (a.expected_bounds)
        build.bounds = BoundRule::expected;
    auto worker = [&] {
        for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
            const auto& job = jobs[j];
            rows[j] = run_algorithm(instances[job.instance].second, instances[job.instance].first, job.algorithm,
                                    a.time_limit, a.memo, build)
                          .row;
            std::lock_guard<std::mutex> lock(log);
            err << instances[job.instance].first << ' ' << job.algorithm << ' ' << status_name(rows[j].status) << '\n';
        }
    };
    const int slots = std::max(1, std::min<int>(a.jobs, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int k = 1; k < slots; ++k)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    write_file(a.out, write_results(rows));
    return ok;
}

// Entry point of the command-line tool. Machine output goes to `out`,
// diagnostics to `err`; the result is the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Finite-horizon multi-agent MDP solver with conditional return graphs", "timmdp"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Write generated instances to a directory");
    generate->add_option("--family", gen.family, "Instance family")
        ->required()
        ->check(CLI::IsMember({"mpp", "pyra", "coordint", "example", "random"}));
    generate->add_option("--n", gen.n, "Number of agents")->check(CLI::PositiveNumber);
    generate->add_option("--tasks", gen.tasks, "Tasks per agent")->check(CLI::PositiveNumber);
    generate->add_option("--horizon", gen.horizon, "Horizon")->check(CLI::PositiveNumber);
    generate->add_option("--density", gen.density, "Interaction density")->check(CLI::Range(0.0, 1.0));
    generate->add_option("--seed", gen.seed, "Base seed");
    generate->add_option("--count", gen.count, "Number of instances")->check(CLI::PositiveNumber);
    generate->add_option("--out", gen.out, "Output directory")->required();

    SolveArgs sol;
    auto* solve = app.add_subcommand("solve", "Solve an instance and print its optimal value");
    solve->add_option("--algorithm", sol.algorithm, "core, crg-ps or dp")
        ->required()
        ->check(CLI::IsMember({"core", "crg-ps", "dp"}));
    solve->add_option("--instance", sol.instance, "Instance file")->required();
    solve->add_option("--time-limit", sol.time_limit, "Seconds")->check(CLI::PositiveNumber);
    solve->add_flag("--memo", sol.memo, "Reuse values of repeated subproblems");
    solve->add_flag("--expected-bounds", sol.expected_bounds, "Bound by expected rather than extreme returns");
    solve->add_option("--stats", sol.stats, "Write a result row to this CSV file");
    solve->add_option("--policy-out", sol.policy_out, "Write the policy to this file");

    std::string eval_instance, eval_policy;
    auto* evaluate = app.add_subcommand("evaluate", "Print the expected return of a policy");
    evaluate->add_option("--instance", eval_instance, "Instance file")->required();
    evaluate->add_option("--policy", eval_policy, "Policy file")->required();

    std::string dot_instance, dot_policy;
    std::optional<int> dot_agent;
    bool dot_bounds = false;
    auto* dot = app.add_subcommand("export-dot", "Print an agent's graph, or a policy's execution tree, as DOT");
    dot->add_option("--instance", dot_instance, "Instance file")->required();
    auto* agent_opt = dot->add_option("--agent", dot_agent, "Agent index, from 0");
    auto* policy_opt = dot->add_option("--policy", dot_policy, "Render this policy instead");
    agent_opt->excludes(policy_opt);
    dot->add_flag("--bounds", dot_bounds, "Annotate state nodes with bounds");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Solve every instance in a directory with every algorithm");
    bench->add_option("--instances", bench_args.instances, "Directory of instance files")->required();
    bench->add_option("--algorithms", bench_args.algorithms, "Comma-separated list")
        ->required()
        ->delimiter(',')
        ->check(CLI::IsMember({"core", "crg-ps", "dp"}));
    bench->add_option("--time-limit", bench_args.time_limit, "Seconds per run")
        ->required()
        ->check(CLI::PositiveNumber);
    bench->add_option("--out", bench_args.out, "Result CSV")->required();
    bench->add_option("--jobs", bench_args.jobs, "Parallel runs")->check(CLI::PositiveNumber);
    bench->add_flag("--memo", bench_args.memo, "Reuse values of repeated subproblems");
    bench->add_flag("--expected-bounds", bench_args.expected_bounds, "Bound by expected rather than extreme returns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        return usage;
    }

    try {
        if (*generate)
            return cmd_generate(gen, out);
        if (*solve)
            return cmd_solve(sol, out, err);
        if (*evaluate)
            return cmd_evaluate(eval_instance, eval_policy, out, err);
        if (*dot) {
            if (!dot_agent && dot_policy.empty()) {
                err << "export-dot needs --agent or --policy\n";
                return usage;
            }
            return cmd_export_dot(dot_instance, dot_agent, dot_policy, dot_bounds, out, err);
        }
        if (*bench)
            return cmd_bench(bench_args, err);
    } catch (const IoError& e) {
        err << e.what() << '\n';
        return usage;
    } catch (const SchemaError& e) {
        err << "error: " << e.what() << '\n';
        return invalid;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << '\n';
        return invalid;
    } catch (const ResourceError& e) {
        err << e.what() << '\n';
        return resource;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return failure;
    }
    return usage;
}

} // namespace timmdp::cli
