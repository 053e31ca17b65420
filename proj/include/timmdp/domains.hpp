#pragma once

#include "baselines.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace timmdp {

struct MaintenanceTask {
    std::string name;
    int duration = 1;
    double delay_probability = 0.0;
    int delayed_duration = 1;
    std::vector<double> cost; // per period, at least h entries
};

struct MppAgent {
    std::string name;
    std::vector<MaintenanceTask> tasks;
};

// Reward `value` (<= 0) whenever agent_a works on task_a while agent_b works
// on task_b during `period`.
struct Hindrance {
    AgentId agent_a = 0;
    int task_a = 0;
    AgentId agent_b = 1;
    int task_b = 0;
    int period = 0;
    double value = 0.0;
};

struct MppInstance {
    InstanceMetadata metadata;
    int horizon = 1;
    double unfinished_penalty = 0.0; // charged per task not done at the horizon
    std::vector<MppAgent> agents;
    std::vector<Hindrance> hindrances;
};

// Local action ids of a compiled MPP agent.
inline constexpr ActionId mpp_idle = 0;
inline constexpr ActionId mpp_continue = 1;
inline constexpr ActionId mpp_start(int task) { return 2 + task; }

// Feature ids of a compiled MPP state; task x's status is feature 2 + x.
inline constexpr FeatureId mpp_time_feature = 0;
inline constexpr FeatureId mpp_active_feature = 1;

namespace detail {

// Status codes: 0 pending, 1 done, 1 + r in progress with r periods left.
constexpr int task_pending = 0;
constexpr int task_done = 1;

inline int status_after(int remaining) { return remaining <= 0 ? task_done : 1 + remaining; }

inline std::string mpp_state_label(int time, const std::vector<int>& status) {
    std::string label = "t" + std::to_string(time);
    for (int st : status) {
        label += ' ';
        if (st == task_pending)
            label += 'P';
        else if (st == task_done)
            label += 'D';
        else
            label += 'W' + std::to_string(st - 1);
    }
    return label;
}

struct MppLocal {
    LocalModel model;
    std::vector<LocalTransition> transitions;
};

inline MppLocal compile_mpp_agent(const MppAgent& agent, int horizon) {
    const int tasks = static_cast<int>(agent.tasks.size());
    MppLocal out;
    auto& model = out.model;
    model.name = agent.name;
    model.feature_names = {"time", "active"};
    for (const auto& task : agent.tasks)
        model.feature_names.push_back("task:" + task.name);
    model.add_action("idle");
    model.add_action("continue");
    for (const auto& task : agent.tasks)
        model.add_action("start " + task.name);

    std::map<std::vector<int>, StateId> index;
    std::vector<std::vector<int>> queue;
    auto intern = [&](int time, const std::vector<int>& status) {
        std::vector<int> key{time};
        key.insert(key.end(), status.begin(), status.end());
        auto it = index.find(key);
        if (it != index.end())
            return it->second;
        int active = -1;
        for (int x = 0; x < tasks; ++x)
            if (status[x] > task_done)
                active = x;
        std::vector<int> features{time, active};
        features.insert(features.end(), status.begin(), status.end());
        const StateId id = model.add_state(mpp_state_label(time, status), std::move(features));
        index.emplace(key, id);
        queue.push_back(key);
        return id;
    };
    intern(0, std::vector<int>(tasks, task_pending));
    for (std::size_t q = 0; q < queue.size(); ++q) {
        const auto key = queue[q];
        const int time = key[0];
        if (time >= horizon)
            continue;
        const std::vector<int> status(key.begin() + 1, key.end());
        const StateId s = index.at(key);
        int active = -1;
        for (int x = 0; x < tasks; ++x)
            if (status[x] > task_done)
                active = x;
        model.add_outcome(s, mpp_idle, intern(time + 1, status), 1.0);
        if (active >= 0) {
            auto next = status;
            next[active] = status_after(status[active] - 2);
            model.add_outcome(s, mpp_continue, intern(time + 1, next), 1.0);
            continue;
        }
        for (int x = 0; x < tasks; ++x) {
            if (status[x] != task_pending)
                continue;
            const auto& task = agent.tasks[x];
            const double p = task.delay_probability;
            std::map<StateId, double> outs;
            if (p < 1.0) {
                auto next = status;
                next[x] = status_after(task.duration - 1);
                outs[intern(time + 1, next)] += 1.0 - p;
            }
            if (p > 0.0) {
                auto next = status;
                next[x] = status_after(task.delayed_duration - 1);
                outs[intern(time + 1, next)] += p;
            }
            std::vector<Outcome> list;
            for (const auto& [next, prob] : outs)
                list.push_back({next, prob});
            model.set_outcomes(s, mpp_start(x), std::move(list));
        }
    }
    out.transitions = model.transitions();
    return out;
}

// Task worked on by the transition, or -1.
inline int worked_task(const LocalModel& model, const LocalTransition& tr) {
    if (tr.action == mpp_continue)
        return model.states[tr.from].features[mpp_active_feature];
    if (tr.action >= 2)
        return tr.action - 2;
    return -1;
}

} // namespace detail

// Compiles an MPP into a TI-MMDP. Local states carry time, the active task
// and every task's status; only states reachable from the all-pending start
// are emitted. Warnings for tasks that cannot finish in time are appended to
// `warnings` when given.
inline Instance compile_mpp(const MppInstance& mpp, std::vector<Violation>* warnings = nullptr) {
    if (mpp.horizon < 1)
        throw ContractError("MPP horizon must be at least 1");
    for (const auto& agent : mpp.agents)
        for (const auto& task : agent.tasks) {
            if (task.duration < 1 || task.delayed_duration < task.duration)
                throw ContractError("task '" + task.name + "' needs 1 <= duration <= delayed duration");
            if (task.delay_probability < 0.0 || task.delay_probability > 1.0)
                throw ContractError("task '" + task.name + "' has a delay probability outside [0, 1]");
            if (static_cast<int>(task.cost.size()) < mpp.horizon)
                throw ContractError("task '" + task.name + "' has fewer cost entries than periods");
        }
    Instance m;
    m.metadata = mpp.metadata;
    m.horizon = mpp.horizon;
    std::vector<detail::MppLocal> locals;
    for (AgentId i = 0; i < static_cast<int>(mpp.agents.size()); ++i) {
        const auto& agent = mpp.agents[i];
        locals.push_back(detail::compile_mpp_agent(agent, mpp.horizon));
        m.agents.push_back(locals.back().model);
        m.initial.push_back(0);
        if (warnings) {
            int total = 0;
            for (const auto& task : agent.tasks) {
                total += task.duration;
                if (task.duration > mpp.horizon)
                    warnings->push_back({Violation::Severity::warning, "agent " + std::to_string(i),
                                         "task '" + task.name + "' cannot finish within the horizon"});
            }
            if (total > mpp.horizon)
                warnings->push_back({Violation::Severity::warning, "agent " + std::to_string(i),
                                     "tasks cannot all finish within the horizon"});
        }
    }

    for (AgentId i = 0; i < static_cast<int>(mpp.agents.size()); ++i) {
        const auto& agent = mpp.agents[i];
        const auto& model = m.agents[i];
        RewardFunction f;
        f.name = "cost:" + (agent.name.empty() ? std::to_string(i) : agent.name);
        f.scope = {i};
        f.views = {std::nullopt};
        for (const auto& tr : locals[i].transitions) {
            const auto& from = model.states[tr.from].features;
            const auto& to = model.states[tr.to].features;
            double r = 0.0;
            const int x = detail::worked_task(model, tr);
            if (x >= 0)
                r -= agent.tasks[x].cost[from[mpp_time_feature]];
            if (to[mpp_time_feature] == mpp.horizon)
                for (int k = 0; k < static_cast<int>(agent.tasks.size()); ++k)
                    if (to[2 + k] != detail::task_done)
                        r -= mpp.unfinished_penalty;
            if (r != 0.0)
                f.entries[{tr.from, tr.action, tr.to}] = r;
        }
        m.rewards.push_back(std::move(f));
    }

    // One hindrance function per agent pair, reading time and active task.
    std::map<std::pair<AgentId, AgentId>, std::vector<Hindrance>> by_pair;
    for (auto h : mpp.hindrances) {
        if (h.agent_a == h.agent_b)
            throw ContractError("hindrance needs two distinct agents");
        if (h.agent_a > h.agent_b) {
            std::swap(h.agent_a, h.agent_b);
            std::swap(h.task_a, h.task_b);
        }
        by_pair[{h.agent_a, h.agent_b}].push_back(h);
    }
    const std::vector<FeatureId> view{mpp_time_feature, mpp_active_feature};
    for (const auto& [pair, list] : by_pair) {
        RewardFunction f;
        f.name = "hindrance:" + std::to_string(pair.first) + "-" + std::to_string(pair.second);
        f.scope = {pair.first, pair.second};
        f.views = {view, view};
        for (const auto& h : list) {
            auto working = [&](AgentId i, int task) {
                std::set<std::vector<int>> keys;
                const auto& model = m.agents[i];
                for (const auto& tr : locals[i].transitions)
                    if (model.states[tr.from].features[mpp_time_feature] == h.period &&
                        detail::worked_task(model, tr) == task) {
                        std::vector<int> key;
                        append_member_key(key, model, view, tr);
                        keys.insert(key);
                    }
                return keys;
            };
            for (const auto& ka : working(pair.first, h.task_a))
                for (const auto& kb : working(pair.second, h.task_b)) {
                    auto key = ka;
                    key.insert(key.end(), kb.begin(), kb.end());
                    f.entries[key] += h.value;
                }
        }
        m.rewards.push_back(std::move(f));
    }
    return m;
}

struct MppParams {
    int agents = 2;
    int tasks = 3;
    int horizon = 5;
    int min_duration = 1;
    int max_duration = 2;
    int max_extra_delay = 1;
    double delay_low = 0.1;
    double delay_high = 0.5;
    int cost_low = 1;
    int cost_high = 10;
    int hindrance_low = 5;
    int hindrance_high = 20;
    double density = 0.5;
    double unfinished_penalty = 30.0;
    // Hindrance only in periods before this one (all periods when unset).
    std::optional<int> interaction_until;
    std::uint64_t seed = 0;
};

namespace detail {

inline MaintenanceTask random_task(SplitMix64& rng, const MppParams& p, const std::string& name) {
    MaintenanceTask task;
    task.name = name;
    task.duration = static_cast<int>(rng.uniform_int(p.min_duration, p.max_duration));
    task.delayed_duration = task.duration + static_cast<int>(rng.uniform_int(1, std::max(1, p.max_extra_delay)));
    task.delay_probability = p.delay_low + (p.delay_high - p.delay_low) * rng.uniform01();
    for (int t = 0; t < p.horizon; ++t)
        task.cost.push_back(static_cast<double>(rng.uniform_int(p.cost_low, p.cost_high)));
    return task;
}

inline std::map<std::string, std::string> mpp_param_map(const MppParams& p) {
    std::map<std::string, std::string> out{
        {"agents", std::to_string(p.agents)},        {"tasks", std::to_string(p.tasks)},
        {"horizon", std::to_string(p.horizon)},      {"density", std::to_string(p.density)},
        {"delay_low", std::to_string(p.delay_low)},  {"delay_high", std::to_string(p.delay_high)},
        {"cost_low", std::to_string(p.cost_low)},    {"cost_high", std::to_string(p.cost_high)},
        {"hindrance_low", std::to_string(p.hindrance_low)},
        {"hindrance_high", std::to_string(p.hindrance_high)},
        {"unfinished_penalty", std::to_string(p.unfinished_penalty)}};
    if (p.interaction_until)
        out["interaction_until"] = std::to_string(*p.interaction_until);
    return out;
}

} // namespace detail

inline MppInstance gen_random_mpp(const MppParams& p) {
    if (p.agents < 1 || p.tasks < 1 || p.horizon < 1)
        throw ContractError("MPP generator needs at least one agent, task and period");
    SplitMix64 rng(p.seed);
    MppInstance mpp;
    mpp.metadata = {"mpp", detail::mpp_param_map(p), p.seed, std::string(SplitMix64::name)};
    mpp.horizon = p.horizon;
    mpp.unfinished_penalty = p.unfinished_penalty;
    for (int i = 0; i < p.agents; ++i) {
        MppAgent agent{"agent" + std::to_string(i), {}};
        for (int x = 0; x < p.tasks; ++x)
            agent.tasks.push_back(detail::random_task(rng, p, std::string(1, static_cast<char>('A' + x % 26)) +
                                                                  (x >= 26 ? std::to_string(x / 26) : "")));
        mpp.agents.push_back(std::move(agent));
    }
    const int until = std::min(p.horizon, p.interaction_until.value_or(p.horizon));
    for (int a = 0; a < p.agents; ++a)
        for (int b = a + 1; b < p.agents; ++b)
            for (int x = 0; x < p.tasks; ++x)
                for (int y = 0; y < p.tasks; ++y) {
                    if (!rng.bernoulli(p.density))
                        continue;
                    for (int t = 0; t < until; ++t)
                        mpp.hindrances.push_back(
                            {a, x, b, y, t, -static_cast<double>(rng.uniform_int(p.hindrance_low, p.hindrance_high))});
                }
    return mpp;
}

// Agent k (1-indexed) has its first task hindered by the first tasks of
// agents 2k and 2k+1.
inline MppInstance gen_pyra(int n, int horizon, std::uint64_t seed, int tasks = 1) {
    if (n < 1)
        throw ContractError("pyramid needs at least one agent");
    MppParams p;
    p.agents = n;
    p.tasks = tasks;
    p.horizon = horizon;
    p.seed = seed;
    p.density = 0.0;
    SplitMix64 rng(seed);
    MppInstance mpp;
    auto params = detail::mpp_param_map(p);
    params.erase("density");
    mpp.metadata = {"pyra", params, seed, std::string(SplitMix64::name)};
    mpp.horizon = horizon;
    mpp.unfinished_penalty = p.unfinished_penalty;
    for (int i = 0; i < n; ++i) {
        MppAgent agent{"agent" + std::to_string(i), {}};
        for (int x = 0; x < tasks; ++x)
            agent.tasks.push_back(detail::random_task(rng, p, std::string(1, static_cast<char>('A' + x % 26))));
        mpp.agents.push_back(std::move(agent));
    }
    for (int k = 1; k <= n; ++k)
        for (int child : {2 * k, 2 * k + 1}) {
            if (child > n)
                continue;
            for (int t = 0; t < horizon; ++t)
                mpp.hindrances.push_back(
                    {k - 1, 0, child - 1, 0, t, -static_cast<double>(rng.uniform_int(p.hindrance_low, p.hindrance_high))});
        }
    return mpp;
}

// Two agents, one task each. Task A of agent 0 is cheap at the start but may
// run one period over; task B of agent 1 is cheapest in period 1 and hinders
// A heavily. B should therefore wait exactly when A ran over, which only a
// policy observing A's state can do.
inline MppInstance gen_coordint(std::uint64_t seed, bool without_delay = false) {
    SplitMix64 rng(seed);
    constexpr int horizon = 4;
    constexpr double expensive = 15.0;
    MppInstance mpp;
    mpp.metadata = {"coordint", {{"without_delay", without_delay ? "true" : "false"}}, seed,
                    std::string(SplitMix64::name)};
    mpp.horizon = horizon;
    mpp.unfinished_penalty = 100.0;

    MaintenanceTask a;
    a.name = "A";
    a.duration = 1;
    a.delayed_duration = 2;
    a.delay_probability = 0.25 + 0.5 * rng.uniform01();
    if (without_delay)
        a.delay_probability = 0.0;
    a.cost.assign(horizon, expensive);
    a.cost[0] = static_cast<double>(rng.uniform_int(1, 3));
    a.cost[1] = static_cast<double>(rng.uniform_int(1, 3));

    MaintenanceTask b;
    b.name = "B";
    b.duration = 1;
    b.delayed_duration = 1;
    b.cost.assign(horizon, expensive);
    b.cost[1] = static_cast<double>(rng.uniform_int(1, 3));
    b.cost[2] = b.cost[1] + static_cast<double>(rng.uniform_int(2, 5));
    const double hindrance = static_cast<double>(rng.uniform_int(15, 25));

    mpp.agents.push_back({"agent0", {a}});
    mpp.agents.push_back({"agent1", {b}});
    for (int t = 0; t < horizon; ++t)
        mpp.hindrances.push_back({0, 0, 1, 0, t, -hindrance});
    return mpp;
}

// Best value over open-loop plans: every task gets a planned start period
// (or never); an agent continues an active task, otherwise starts the
// earliest-planned pending task whose period has come, otherwise idles. The
// plans ignore how delays turned out.
inline double best_open_loop_value(const MppInstance& mpp, std::size_t max_plans = 1'000'000) {
    const Instance m = compile_mpp(mpp);
    const int n = static_cast<int>(mpp.agents.size());
    const int choices = mpp.horizon + 1;
    std::vector<int> tasks(n);
    std::size_t count = 1;
    for (int i = 0; i < n; ++i) {
        tasks[i] = static_cast<int>(mpp.agents[i].tasks.size());
        for (int x = 0; x < tasks[i]; ++x) {
            count *= choices;
            if (count > max_plans)
                throw ResourceError("too many open-loop plans");
        }
    }
    std::vector<std::vector<int>> plan(n);
    for (int i = 0; i < n; ++i)
        plan[i].assign(tasks[i], 0);
    const DecisionRule rule = [&](int, const JointState& s) {
        JointAction a(n, mpp_idle);
        for (int i = 0; i < n; ++i) {
            const auto& feats = m.agents[i].states[s[i]].features;
            const int time = feats[mpp_time_feature];
            if (feats[mpp_active_feature] >= 0) {
                a[i] = mpp_continue;
                continue;
            }
            int pick = -1;
            for (int x = 0; x < tasks[i]; ++x)
                if (feats[2 + x] == detail::task_pending && plan[i][x] <= time &&
                    (pick < 0 || plan[i][x] < plan[i][pick]))
                    pick = x;
            if (pick >= 0)
                a[i] = mpp_start(pick);
        }
        return a;
    };
    std::vector<int*> digits;
    for (auto& row : plan)
        for (auto& d : row)
            digits.push_back(&d);
    double best = -std::numeric_limits<double>::infinity();
    while (true) {
        best = std::max(best, evaluate_decision_rule(m, rule).value);
        std::size_t k = 0;
        while (k < digits.size() && ++*digits[k] == choices)
            *digits[k++] = 0;
        if (k == digits.size())
            break;
    }
    return best;
}

// Two agents with actions a, b, c that can each be used once over two steps.
// Agent 1's feature f1 starts unknown and is set by a¹: true from the start
// state, false after another action. Agent 2's c is stochastic (c 0.75, c'
// 0.25). The only interaction pays when a¹ and a² run together, depending on
// the value f1 takes.
inline Instance example_two_agent() {
    Instance m;
    m.metadata = {"example", {}, 0, std::string(SplitMix64::name)};
    m.horizon = 2;
    const std::vector<std::string> names{"a", "b", "c"};

    LocalModel one;
    one.name = "agent1";
    one.feature_names = {"f1"};
    enum { unknown = 0, yes = 1, no = 2 };
    for (const auto& x : names)
        one.add_action(x);
    const StateId o0 = one.add_state("s0", {unknown});
    std::vector<StateId> first(3);
    for (int x = 0; x < 3; ++x)
        first[x] = one.add_state("s_" + names[x], {x == 0 ? yes : unknown});
    for (int x = 0; x < 3; ++x)
        one.add_outcome(o0, x, first[x], 1.0);
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y) {
            if (x == y)
                continue;
            int f = one.states[first[x]].features[0];
            if (y == 0)
                f = no;
            const StateId s2 = one.add_state("s_" + names[x] + names[y], {f});
            one.add_outcome(first[x], y, s2, 1.0);
        }

    LocalModel two;
    two.name = "agent2";
    for (const auto& x : names)
        two.add_action(x);
    const StateId t0 = two.add_state("s0");
    const StateId ta = two.add_state("s_a");
    const StateId tb = two.add_state("s_b");
    const StateId tc = two.add_state("s_c");
    const StateId tc2 = two.add_state("s_c'");
    two.add_outcome(t0, 0, ta, 1.0);
    two.add_outcome(t0, 1, tb, 1.0);
    two.add_outcome(t0, 2, tc, 0.75);
    two.add_outcome(t0, 2, tc2, 0.25);
    struct After {
        StateId state;
        std::string tag;
        std::vector<int> used;
    };
    for (const auto& [state, tag, used] : std::vector<After>{{ta, "a", {0}}, {tb, "b", {1}}, {tc, "c", {2}}, {tc2, "c'", {2}}})
        for (int y = 0; y < 3; ++y) {
            if (std::find(used.begin(), used.end(), y) != used.end())
                continue;
            if (y == 2) {
                const StateId c = two.add_state("s_" + tag + "c");
                const StateId c2 = two.add_state("s_" + tag + "c'");
                two.add_outcome(state, y, c, 0.75);
                two.add_outcome(state, y, c2, 0.25);
            } else {
                two.add_outcome(state, y, two.add_state("s_" + tag + names[y]), 1.0);
            }
        }

    m.agents = {one, two};
    m.initial = {o0, t0};

    RewardFunction r1{"R1", {0}, {std::nullopt}, 0.0, {}, std::nullopt};
    const double local1[] = {3.0, 2.0, 1.0};
    for (const auto& tr : m.agents[0].transitions())
        r1.entries[{tr.from, tr.action, tr.to}] = local1[tr.action];

    RewardFunction r2{"R2", {1}, {std::nullopt}, 0.0, {}, std::nullopt};
    for (const auto& tr : m.agents[1].transitions()) {
        double v = tr.action == 0 ? 2.0 : tr.action == 1 ? 3.0 : 4.0;
        if (tr.action == 2 && m.agents[1].states[tr.to].label.back() == '\'')
            v = 0.0;
        if (v != 0.0)
            r2.entries[{tr.from, tr.action, tr.to}] = v;
    }

    RewardFunction r12{"R12", {0, 1}, {std::vector<FeatureId>{0}, std::vector<FeatureId>{}}, 0.0, {}, 1};
    r12.entries[{unknown, 0, yes, 0}] = -4.0;
    r12.entries[{unknown, 0, no, 0}] = 1.5;

    m.rewards = {r1, r2, r12};
    return m;
}

struct RandomInstanceParams {
    int min_agents = 2;
    int max_agents = 3;
    int max_states = 4;
    int min_actions = 2;
    int max_actions = 3;
    int max_horizon = 4;
    std::uint64_t seed = 0;
};

// Small unstructured TI-MMDPs for property checks. Probabilities and rewards
// are dyadic so sums of them are exact in floating point.
inline Instance gen_random_instance(const RandomInstanceParams& p) {
    SplitMix64 rng(p.seed);
    Instance m;
    m.metadata = {"random",
                  {{"min_agents", std::to_string(p.min_agents)},
                   {"max_agents", std::to_string(p.max_agents)},
                   {"max_states", std::to_string(p.max_states)},
                   {"min_actions", std::to_string(p.min_actions)},
                   {"max_actions", std::to_string(p.max_actions)},
                   {"max_horizon", std::to_string(p.max_horizon)}},
                  p.seed,
                  std::string(SplitMix64::name)};
    const int n = static_cast<int>(rng.uniform_int(p.min_agents, p.max_agents));
    m.horizon = static_cast<int>(rng.uniform_int(1, p.max_horizon));
    auto dyadic = [&](int lo, int hi) { return static_cast<double>(rng.uniform_int(lo * 4, hi * 4)) / 4.0; };

    for (int i = 0; i < n; ++i) {
        LocalModel model;
        model.name = "agent" + std::to_string(i);
        model.feature_names = {"f"};
        const int S = static_cast<int>(rng.uniform_int(2, p.max_states));
        const int A = static_cast<int>(rng.uniform_int(p.min_actions, p.max_actions));
        for (int s = 0; s < S; ++s)
            model.add_state("s" + std::to_string(s), {static_cast<int>(rng.uniform_int(0, 1))});
        for (int a = 0; a < A; ++a)
            model.add_action("a" + std::to_string(a));
        for (int s = 0; s < S; ++s) {
            const int forced = static_cast<int>(rng.uniform_int(0, A - 1));
            for (int a = 0; a < A; ++a) {
                if (a != forced && rng.bernoulli(0.2))
                    continue;
                const StateId x = static_cast<StateId>(rng.uniform_int(0, S - 1));
                if (rng.bernoulli(0.5)) {
                    StateId y = static_cast<StateId>(rng.uniform_int(0, S - 2));
                    if (y >= x)
                        ++y;
                    const double px = rng.bernoulli(0.5) ? 0.5 : 0.25;
                    model.set_outcomes(s, a, {{x, px}, {y, 1.0 - px}});
                } else {
                    model.set_outcomes(s, a, {{x, 1.0}});
                }
            }
        }
        m.agents.push_back(std::move(model));
        m.initial.push_back(0);
    }

    auto random_view = [&]() -> std::optional<std::vector<FeatureId>> {
        const auto roll = rng.uniform_int(0, 3);
        if (roll == 0)
            return std::vector<FeatureId>{0};
        if (roll == 1)
            return std::vector<FeatureId>{};
        return std::nullopt;
    };
    auto fill = [&](RewardFunction& f, double density) {
        // Sparse entries over possible member transitions.
        std::vector<std::vector<LocalTransition>> trs;
        for (AgentId j : f.scope)
            trs.push_back(m.agents[j].transitions());
        const int draws = 2 + static_cast<int>(rng.uniform_int(0, 6));
        for (int d = 0; d < draws; ++d) {
            if (!rng.bernoulli(density))
                continue;
            std::vector<int> key;
            for (std::size_t k = 0; k < f.scope.size(); ++k) {
                const auto& tr = trs[k][rng.uniform_int(0, static_cast<std::int64_t>(trs[k].size()) - 1)];
                append_member_key(key, m.agents[f.scope[k]], f.view(static_cast<int>(k)), tr);
            }
            f.entries[key] = dyadic(-3, 3);
        }
    };

    for (int i = 0; i < n; ++i) {
        RewardFunction f{"local" + std::to_string(i), {i}, {std::nullopt}, 0.0, {}, std::nullopt};
        for (const auto& tr : m.agents[i].transitions())
            if (rng.bernoulli(0.6))
                f.entries[{tr.from, tr.action, tr.to}] = dyadic(-2, 3);
        m.rewards.push_back(std::move(f));
    }
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (!rng.bernoulli(0.75))
                continue;
            RewardFunction f{"pair" + std::to_string(i) + std::to_string(j), {i, j}, {random_view(), random_view()},
                             0.0, {}, std::nullopt};
            if (rng.bernoulli(0.05))
                f.default_value = dyadic(-1, 1);
            fill(f, 0.9);
            m.rewards.push_back(std::move(f));
        }
    if (n >= 3 && rng.bernoulli(0.3)) {
        RewardFunction f{"triple", {0, 1, 2}, {random_view(), random_view(), random_view()}, 0.0, {}, std::nullopt};
        fill(f, 0.9);
        m.rewards.push_back(std::move(f));
    }
    return m;
}

} // namespace timmdp
