#pragma once

#include "crg.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "policy.hpp"

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

namespace timmdp {

// One evaluated joint action, reported to SearchConfig::observer.
struct SearchEvent {
    int t = 0;
    std::vector<AgentId> agents;
    double lmax_before = 0.0;
    double value = 0.0;
    double lmax_after = 0.0;
};

struct SearchConfig {
    bool pruning = true; // false gives CRG-PS
    bool memoization = false;
    double tolerance = 1e-9;
    std::optional<std::chrono::milliseconds> time_budget;
    std::function<void(const SearchEvent&)> observer;
};

struct SearchStats {
    long long joint_actions_evaluated = 0;
    long long nodes_pruned = 0;
    long long decouple_events = 0;
    int max_component_size = 0;
};

struct SolveReport {
    bool complete = false;
    std::optional<double> value;
    Policy policy;
    SearchStats stats;
    double wall_time_ms = 0.0;
};

namespace detail {

struct VectorHash {
    std::size_t operator()(const std::vector<int>& v) const noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (int x : v) {
            h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(x));
            h *= 0x100000001b3ULL;
        }
        return static_cast<std::size_t>(h ^ (h >> 29));
    }
};

// Expected R_i over the outcomes of the agent's own action and those of the
// tree agents inside the component. Terms needing agents outside the
// component are skipped: those functions can no longer be nonzero.
inline double expected_reward(const CrgSet& crgs, AgentId i, const std::vector<char>& in_component, const JointState& s,
                              const JointAction& a) {
    const auto& g = crgs[i];
    const auto& m = *crgs.instance;
    const auto& tree = g.tree_agents();
    std::vector<int> present_pos;
    std::uint64_t present = 0;
    for (std::size_t p = 0; p < tree.size(); ++p)
        if (in_component[tree[p]]) {
            present_pos.push_back(static_cast<int>(p));
            present |= 1ULL << p;
        }
    std::vector<LocalTransition> ctx(tree.size());
    const auto& own = m.agents[i].outcomes(s[i], a[i]);
    double sum = 0.0;
    std::function<void(std::size_t, double, StateId)> rec = [&](std::size_t k, double p, StateId next) {
        if (k == present_pos.size()) {
            sum += p * g.reward(g.resolve(s[i], a[i], next, ctx.data(), present), present);
            return;
        }
        const int pos = present_pos[k];
        const AgentId j = tree[pos];
        for (const auto& o : m.agents[j].outcomes(s[j], a[j])) {
            ctx[pos] = {s[j], a[j], o.next};
            rec(k + 1, p * o.probability, next);
        }
    };
    for (const auto& o : own)
        rec(0, o.probability, o.next);
    return sum;
}

struct ActionBounds {
    double reward = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

inline ActionBounds action_bounds(const CrgSet& crgs, int t, const std::vector<AgentId>& agents,
                                  const std::vector<char>& in_component, const JointState& s, const JointAction& a) {
    const auto& m = *crgs.instance;
    ActionBounds b;
    double up = 0.0, lo = 0.0;
    for (AgentId i : agents) {
        b.reward += expected_reward(crgs, i, in_component, s, a);
        for (const auto& o : m.agents[i].outcomes(s[i], a[i])) {
            up += o.probability * crgs[i].upper(t + 1, o.next);
            lo += o.probability * crgs[i].lower(t + 1, o.next);
        }
    }
    b.upper = b.reward + up;
    b.lower = b.reward + lo;
    return b;
}

} // namespace detail

// Connected components of `agents` under the interaction rewards that lie
// inside the set and are still reachable for every member.
inline std::vector<std::vector<AgentId>> independent_components(const CrgSet& crgs, int t,
                                                                const std::vector<AgentId>& agents, const JointState& s) {
    const auto& m = *crgs.instance;
    const int n = m.num_agents();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    std::vector<char> inside(n, 0);
    for (AgentId i : agents)
        inside[i] = 1;
    if (t < m.horizon)
        for (int r : crgs.interaction_rewards) {
            const auto& scope = m.rewards[r].scope;
            bool live = true;
            for (AgentId j : scope)
                if (!inside[j] || !crgs[j].interaction_reachable(t, s[j], r)) {
                    live = false;
                    break;
                }
            if (!live)
                continue;
            for (std::size_t k = 1; k < scope.size(); ++k)
                parent[find(scope[k])] = find(scope[0]);
        }
    std::vector<std::vector<AgentId>> comps;
    std::vector<int> slot(n, -1);
    for (AgentId i : agents) {
        const int root = find(i);
        if (slot[root] < 0) {
            slot[root] = static_cast<int>(comps.size());
            comps.emplace_back();
        }
        comps[slot[root]].push_back(i);
    }
    for (auto& c : comps)
        std::sort(c.begin(), c.end());
    std::sort(comps.begin(), comps.end());
    return comps;
}

// (L, U) for a joint action of `agents` in s at stage t: expected reward plus
// expected next-stage bounds summed over the agents.
inline std::pair<double, double> joint_action_bounds(const CrgSet& crgs, int t, const std::vector<AgentId>& agents,
                                                     const JointState& s, const JointAction& a) {
    std::vector<char> inside(crgs.instance->num_agents(), 0);
    for (AgentId i : agents)
        inside[i] = 1;
    const auto b = detail::action_bounds(crgs, t, agents, inside, s, a);
    return {b.lower, b.upper};
}

namespace detail {

class CoreSearch {
public:
    CoreSearch(const Instance& m, const CrgSet& crgs, const SearchConfig& cfg)
        : m_(m), crgs_(crgs), cfg_(cfg), local_recorded_(m.num_agents()) {
        if (cfg.time_budget)
            deadline_ = std::chrono::steady_clock::now() + *cfg.time_budget;
        for (AgentId i = 0; i < m.num_agents(); ++i)
            local_recorded_[i].assign(static_cast<std::size_t>(m.horizon + 1) * m.agents[i].num_states(), 0);
    }

    double run() {
        std::vector<AgentId> all(m_.num_agents());
        std::iota(all.begin(), all.end(), 0);
        return core(0, all, m_.initial);
    }

    SearchStats stats;
    Policy policy;

private:
    void check_time() {
        if (deadline_ && std::chrono::steady_clock::now() > *deadline_)
            throw TimeoutError();
    }

    double core(int t, const std::vector<AgentId>& agents, const JointState& s) {
        check_time();
        if (t >= m_.horizon)
            return 0.0;
        const auto comps = independent_components(crgs_, t, agents, s);
        if (comps.size() > 1)
            ++stats.decouple_events;
        double value = 0.0;
        for (const auto& c : comps)
            value += component(t, c, s);
        return value;
    }

    // A lone agent has no live interaction left: its optimal continuation is
    // the local one.
    double singleton(int t, AgentId i, StateId si) {
        const auto& g = crgs_[i];
        const int S = m_.agents[i].num_states();
        std::vector<std::pair<int, StateId>> stack{{t, si}};
        while (!stack.empty()) {
            auto [u, x] = stack.back();
            stack.pop_back();
            if (u >= m_.horizon)
                continue;
            auto& done = local_recorded_[i][static_cast<std::size_t>(u) * S + x];
            if (done)
                continue;
            done = 1;
            const ActionId a = g.local_action(u, x);
            if (a < 0)
                continue;
            policy.set(u, {i}, {x}, {a});
            for (const auto& o : m_.agents[i].outcomes(x, a))
                stack.push_back({u + 1, o.next});
        }
        return g.local_value(t, si);
    }

    double component(int t, const std::vector<AgentId>& C, const JointState& s) {
        stats.max_component_size = std::max(stats.max_component_size, static_cast<int>(C.size()));
        if (C.size() == 1)
            return singleton(t, C[0], s[C[0]]);

        std::vector<int> key;
        std::vector<StateId> sub_state;
        for (AgentId i : C)
            sub_state.push_back(s[i]);
        if (cfg_.memoization) {
            key.reserve(2 + 2 * C.size());
            key.push_back(t);
            key.insert(key.end(), C.begin(), C.end());
            key.insert(key.end(), sub_state.begin(), sub_state.end());
            auto it = memo_.find(key);
            if (it != memo_.end())
                return it->second;
        }

        const std::size_t k_count = C.size();
        std::vector<const std::vector<ActionId>*> kept(k_count);
        for (std::size_t k = 0; k < k_count; ++k) {
            kept[k] = &crgs_[C[k]].kept_actions(t, s[C[k]]);
            if (kept[k]->empty())
                throw InternalError("agent " + std::to_string(C[k]) + " has no action at stage " + std::to_string(t));
        }
        std::vector<char> inside(m_.num_agents(), 0);
        for (AgentId i : C)
            inside[i] = 1;

        struct Candidate {
            JointAction action;
            ActionBounds bounds;
        };
        std::vector<Candidate> cands;
        std::vector<std::size_t> idx(k_count, 0);
        JointAction a(m_.num_agents(), -1);
        while (true) {
            for (std::size_t k = 0; k < k_count; ++k)
                a[C[k]] = (*kept[k])[idx[k]];
            cands.push_back({a, action_bounds(crgs_, t, C, inside, s, a)});
            int k = static_cast<int>(k_count) - 1;
            while (k >= 0 && ++idx[k] == kept[k]->size())
                idx[k--] = 0;
            if (k < 0)
                break;
        }

        double lmax = -std::numeric_limits<double>::infinity();
        for (const auto& c : cands)
            lmax = std::max(lmax, c.bounds.lower);
        std::vector<std::size_t> order(cands.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t x, std::size_t y) { return cands[x].bounds.upper > cands[y].bounds.upper; });

        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = cands.size();
        for (std::size_t ci : order) {
            const auto& c = cands[ci];
            if (cfg_.pruning && c.bounds.upper < lmax - cfg_.tolerance) {
                ++stats.nodes_pruned;
                continue;
            }
            const double v = c.bounds.reward + expected_future(t, C, s, c.action);
            ++stats.joint_actions_evaluated;
            const double before = lmax;
            lmax = std::max(lmax, v);
            if (cfg_.observer)
                cfg_.observer({t, C, before, v, lmax});
            if (v > best || (v == best && ci < best_idx)) {
                best = v;
                best_idx = ci;
            }
        }
        std::vector<ActionId> chosen;
        for (AgentId i : C)
            chosen.push_back(cands[best_idx].action[i]);
        policy.set(t, C, sub_state, chosen);
        if (cfg_.memoization)
            memo_.emplace(std::move(key), best);
        return best;
    }

    // Σ over the component's joint successors of p · core(t+1, ·).
    double expected_future(int t, const std::vector<AgentId>& C, const JointState& s, const JointAction& a) {
        std::vector<const std::vector<Outcome>*> outs(C.size());
        for (std::size_t k = 0; k < C.size(); ++k)
            outs[k] = &m_.agents[C[k]].outcomes(s[C[k]], a[C[k]]);
        std::vector<std::size_t> idx(C.size(), 0);
        JointState next = s;
        double sum = 0.0;
        while (true) {
            double p = 1.0;
            for (std::size_t k = 0; k < C.size(); ++k) {
                const auto& o = (*outs[k])[idx[k]];
                next[C[k]] = o.next;
                p *= o.probability;
            }
            sum += p * core(t + 1, C, next);
            int k = static_cast<int>(C.size()) - 1;
            while (k >= 0 && ++idx[k] == outs[k]->size())
                idx[k--] = 0;
            if (k < 0)
                break;
        }
        return sum;
    }

    const Instance& m_;
    const CrgSet& crgs_;
    const SearchConfig& cfg_;
    std::optional<std::chrono::steady_clock::time_point> deadline_;
    std::unordered_map<std::vector<int>, double, VectorHash> memo_;
    std::vector<std::vector<char>> local_recorded_;
};

} // namespace detail

inline SolveReport core_solve(const Instance& m, const CrgSet& crgs, const SearchConfig& cfg = {}) {
    if (!(cfg.tolerance > 0.0))
        throw ContractError("search tolerance must be positive");
    if (crgs.instance != &m || static_cast<int>(crgs.graphs.size()) != m.num_agents())
        throw ContractError("CRGs were built for a different instance");
    const auto start = std::chrono::steady_clock::now();
    detail::CoreSearch search(m, crgs, cfg);
    SolveReport report;
    try {
        report.value = search.run();
        report.complete = true;
        report.policy = std::move(search.policy);
    } catch (const TimeoutError&) {
        report.complete = false;
    }
    report.stats = search.stats;
    report.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
}

// Builds the CRGs with the instance's default partition and solves.
inline SolveReport core_solve(const Instance& m, const SearchConfig& cfg = {}, BuildOptions options = {}) {
    const auto start = std::chrono::steady_clock::now();
    const auto crgs = build_crgs(m, default_partition(m), options);
    auto report = core_solve(m, crgs, cfg);
    report.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
}

inline Policy extract_policy(const SolveReport& report) {
    if (!report.complete)
        throw ContractError("cannot extract a policy from an incomplete solve");
    return report.policy;
}

} // namespace timmdp
