#pragma once

#include "errors.hpp"
#include "model.hpp"
#include "policy.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

namespace timmdp {

struct JointStateHash {
    std::size_t operator()(const JointState& v) const noexcept {
        std::uint64_t h = 0x84222325cbf29ce4ULL;
        for (int x : v) {
            h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(x)) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        }
        return static_cast<std::size_t>(h);
    }
};

// V*(t, s) for every joint state reachable from s_0 at stage t.
struct ValueTable {
    std::vector<std::unordered_map<JointState, double, JointStateHash>> stages;

    std::optional<double> value(int t, const JointState& s) const {
        if (t < 0 || t >= static_cast<int>(stages.size()))
            return std::nullopt;
        auto it = stages[t].find(s);
        if (it == stages[t].end())
            return std::nullopt;
        return it->second;
    }
};

struct DpOptions {
    std::size_t max_states = 5'000'000;
    std::optional<std::chrono::milliseconds> time_budget;
};

struct DpStats {
    long long joint_actions_evaluated = 0;
    long long states_expanded = 0;
};

struct DpResult {
    double value = 0.0;
    ValueTable values;
    Policy policy;
    DpStats stats;
    double wall_time_ms = 0.0;
};

// Backward induction over the joint states reachable from s_0. Ties go to
// the lexicographically smallest joint action.
inline DpResult dp_solve(const Instance& m, const DpOptions& options = {}) {
    const auto start = std::chrono::steady_clock::now();
    std::optional<std::chrono::steady_clock::time_point> deadline;
    if (options.time_budget)
        deadline = start + *options.time_budget;
    auto check_time = [&] {
        if (deadline && std::chrono::steady_clock::now() > *deadline)
            throw TimeoutError();
    };
    const int h = m.horizon;
    const RewardEvaluator rewards(m);

    std::vector<std::vector<JointState>> layers(h + 1);
    layers[0].push_back(m.initial);
    std::size_t total = 1;
    for (int t = 0; t < h; ++t) {
        std::unordered_map<JointState, char, JointStateHash> seen;
        for (const auto& s : layers[t]) {
            check_time();
            for (const auto& a : available_joint_actions(m, s))
                for (auto& o : enumerate_successors(m, s, a))
                    if (seen.emplace(o.state, 1).second) {
                        layers[t + 1].push_back(std::move(o.state));
                        if (++total > options.max_states)
                            throw ResourceError("joint state space exceeds " + std::to_string(options.max_states) +
                                                " states");
                    }
        }
    }

    DpResult result;
    result.values.stages.resize(h + 1);
    for (const auto& s : layers[h])
        result.values.stages[h].emplace(s, 0.0);
    for (int t = h - 1; t >= 0; --t) {
        auto& next_values = result.values.stages[t + 1];
        for (const auto& s : layers[t]) {
            check_time();
            ++result.stats.states_expanded;
            double best = -std::numeric_limits<double>::infinity();
            JointAction best_action;
            for (const auto& a : available_joint_actions(m, s)) {
                ++result.stats.joint_actions_evaluated;
                double q = 0.0;
                for (const auto& o : enumerate_successors(m, s, a))
                    q += o.probability * (rewards.total(s, a, o.state) + next_values.at(o.state));
                if (q > best) {
                    best = q;
                    best_action = a;
                }
            }
            if (best_action.empty())
                throw ContractError("no joint action available at stage " + std::to_string(t) + ", state " +
                                    format_state(s));
            result.values.stages[t].emplace(s, best);
            result.policy.set_joint(t, s, best_action);
        }
    }
    result.value = result.values.stages[0].at(m.initial);
    result.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return result;
}

struct PolicyEvaluation {
    double value = 0.0;
    double total_probability = 0.0; // of all enumerated length-h sequences
    long long sequences = 0;
};

using DecisionRule = std::function<JointAction(int, const JointState&)>;

// Expected return by enumerating every execution sequence of length h
// reachable under the rule, depth first.
inline PolicyEvaluation evaluate_decision_rule(const Instance& m, const DecisionRule& rule) {
    const RewardEvaluator rewards(m);
    PolicyEvaluation out;
    std::function<void(int, const JointState&, double, double)> dfs = [&](int t, const JointState& s, double p,
                                                                           double ret) {
        if (t == m.horizon) {
            out.value += p * ret;
            out.total_probability += p;
            ++out.sequences;
            return;
        }
        const JointAction a = rule(t, s);
        for (const auto& o : enumerate_successors(m, s, a))
            dfs(t + 1, o.state, p * o.probability, ret + rewards.total(s, a, o.state));
    };
    dfs(0, m.initial, 1.0, 0.0);
    return out;
}

inline PolicyEvaluation evaluate_policy_sequences(const Instance& m, const Policy& pi) {
    return evaluate_decision_rule(m, [&](int t, const JointState& s) { return pi.require(t, s); });
}

inline double evaluate_policy(const Instance& m, const Policy& pi) { return evaluate_policy_sequences(m, pi).value; }

// Same value by backward induction over the states the policy reaches.
inline double evaluate_policy_backward(const Instance& m, const Policy& pi) {
    const RewardEvaluator rewards(m);
    std::vector<std::unordered_map<JointState, double, JointStateHash>> memo(m.horizon + 1);
    std::function<double(int, const JointState&)> value = [&](int t, const JointState& s) -> double {
        if (t == m.horizon)
            return 0.0;
        auto it = memo[t].find(s);
        if (it != memo[t].end())
            return it->second;
        const JointAction a = pi.require(t, s);
        double v = 0.0;
        for (const auto& o : enumerate_successors(m, s, a))
            v += o.probability * (rewards.total(s, a, o.state) + value(t + 1, o.state));
        memo[t].emplace(s, v);
        return v;
    };
    return value(0, m.initial);
}

// The agents in `agents`, started from their entries of `start`, over
// `horizon` steps, with only the rewards whose scope lies inside the set.
inline Instance sub_instance(const Instance& m, const std::vector<AgentId>& agents, const JointState& start,
                             int horizon) {
    Instance out;
    out.metadata = m.metadata;
    out.horizon = horizon;
    std::vector<int> remap(m.num_agents(), -1);
    for (std::size_t k = 0; k < agents.size(); ++k) {
        remap.at(agents[k]) = static_cast<int>(k);
        out.agents.push_back(m.agents.at(agents[k]));
        out.initial.push_back(start.at(agents[k]));
    }
    for (const auto& f : m.rewards) {
        bool inside = true;
        for (AgentId j : f.scope)
            if (remap[j] < 0)
                inside = false;
        if (!inside)
            continue;
        RewardFunction g = f;
        for (auto& j : g.scope)
            j = remap[j];
        if (g.owner)
            g.owner = remap[*g.owner];
        out.rewards.push_back(std::move(g));
    }
    return out;
}

} // namespace timmdp
