#pragma once

#include "errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace timmdp {

using AgentId = int;
using StateId = int;
using ActionId = int;
using FeatureId = int;

// Indexed by AgentId.
using JointState = std::vector<StateId>;
using JointAction = std::vector<ActionId>;

inline constexpr double probability_tolerance = 1e-9;

struct LocalState {
    StateId id = 0;
    std::string label;
    std::vector<int> features; // aligned with LocalModel::feature_names
};

struct LocalAction {
    ActionId id = 0;
    std::string label;
};

struct Outcome {
    StateId next = 0;
    double probability = 0.0;
};

struct LocalTransition {
    StateId from = 0;
    ActionId action = 0;
    StateId to = 0;

    auto operator<=>(const LocalTransition&) const = default;
};

// One agent's local MDP: states, actions and T^i. The transition table is
// dense over (state, action); an empty outcome list means the action is not
// available in that state.
class LocalModel {
public:
    std::string name;
    std::vector<std::string> feature_names;
    std::vector<LocalState> states;
    std::vector<LocalAction> actions;

    StateId add_state(std::string label, std::vector<int> features = {}) {
        const StateId id = num_states();
        states.push_back({id, std::move(label), std::move(features)});
        return id;
    }

    ActionId add_action(std::string label) {
        const ActionId id = num_actions();
        actions.push_back({id, std::move(label)});
        return id;
    }

    int num_states() const { return static_cast<int>(states.size()); }
    int num_actions() const { return static_cast<int>(actions.size()); }

    const std::vector<Outcome>& outcomes(StateId s, ActionId a) const {
        static const std::vector<Outcome> none;
        if (s < 0 || s >= static_cast<int>(table_.size()))
            return none;
        const auto& row = table_[s];
        if (a < 0 || a >= static_cast<int>(row.size()))
            return none;
        return row[a];
    }

    // Outcomes are kept sorted by next-state id.
    void add_outcome(StateId s, ActionId a, StateId next, double p) {
        auto& list = cell(s, a);
        auto it = std::lower_bound(list.begin(), list.end(), next,
                                   [](const Outcome& o, StateId x) { return o.next < x; });
        list.insert(it, Outcome{next, p});
    }

    void set_outcomes(StateId s, ActionId a, std::vector<Outcome> list) {
        std::sort(list.begin(), list.end(), [](const Outcome& x, const Outcome& y) { return x.next < y.next; });
        cell(s, a) = std::move(list);
    }

    bool available(StateId s, ActionId a) const { return !outcomes(s, a).empty(); }

    std::vector<ActionId> available_actions(StateId s) const {
        std::vector<ActionId> out;
        for (ActionId a = 0; a < num_actions(); ++a)
            if (available(s, a))
                out.push_back(a);
        return out;
    }

    double probability(StateId s, ActionId a, StateId next) const {
        for (const auto& o : outcomes(s, a))
            if (o.next == next)
                return o.probability;
        return 0.0;
    }

    // Every (s, a, s') with positive probability, in (s, a, s') order.
    std::vector<LocalTransition> transitions() const {
        std::vector<LocalTransition> out;
        for (StateId s = 0; s < num_states(); ++s)
            for (ActionId a = 0; a < num_actions(); ++a)
                for (const auto& o : outcomes(s, a))
                    if (o.probability > 0)
                        out.push_back({s, a, o.next});
        return out;
    }

    int feature_index(const std::string& feature) const {
        for (int f = 0; f < static_cast<int>(feature_names.size()); ++f)
            if (feature_names[f] == feature)
                return f;
        return -1;
    }

private:
    std::vector<Outcome>& cell(StateId s, ActionId a) {
        if (s < 0 || a < 0)
            throw ContractError("negative state or action id");
        if (static_cast<int>(table_.size()) <= s)
            table_.resize(s + 1);
        auto& row = table_[s];
        if (static_cast<int>(row.size()) <= a)
            row.resize(a + 1);
        return row[a];
    }

    std::vector<std::vector<std::vector<Outcome>>> table_;
};

// Reward over the local transitions of the agents in `scope`. For each scope
// member the table reads either the full state id (view = nullopt) or the
// listed features of the state. Keys are flattened member by member as
// [from key..., action, to key...].
struct RewardFunction {
    std::string name;
    std::vector<AgentId> scope;
    std::vector<std::optional<std::vector<FeatureId>>> views;
    double default_value = 0.0;
    std::map<std::vector<int>, double> entries;
    // Preferred agent when partitioning; used by the fixed strategy.
    std::optional<AgentId> owner;

    bool is_local() const { return scope.size() == 1; }

    int position(AgentId agent) const {
        for (int k = 0; k < static_cast<int>(scope.size()); ++k)
            if (scope[k] == agent)
                return k;
        return -1;
    }

    const std::optional<std::vector<FeatureId>>& view(int k) const {
        static const std::optional<std::vector<FeatureId>> full;
        return k < static_cast<int>(views.size()) ? views[k] : full;
    }
};

struct InstanceMetadata {
    std::string generator;
    std::map<std::string, std::string> params;
    std::uint64_t seed = 0;
    std::string rng;
};

struct Instance {
    InstanceMetadata metadata;
    int horizon = 1;
    std::vector<LocalModel> agents;
    std::vector<RewardFunction> rewards;
    JointState initial;

    int num_agents() const { return static_cast<int>(agents.size()); }
};

// Key of a state as read through a view.
inline std::vector<int> view_key(const LocalModel& model, const std::optional<std::vector<FeatureId>>& view,
                                 StateId s) {
    if (!view)
        return {s};
    std::vector<int> key;
    key.reserve(view->size());
    const auto& feats = model.states.at(s).features;
    for (FeatureId f : *view)
        key.push_back(feats.at(f));
    return key;
}

inline void append_member_key(std::vector<int>& key, const LocalModel& model,
                              const std::optional<std::vector<FeatureId>>& view, const LocalTransition& tr) {
    auto from = view_key(model, view, tr.from);
    auto to = view_key(model, view, tr.to);
    key.insert(key.end(), from.begin(), from.end());
    key.push_back(tr.action);
    key.insert(key.end(), to.begin(), to.end());
}

// R^e(tr^e) by direct table lookup; `tr` is aligned with f.scope.
inline double reward_value(const Instance& m, const RewardFunction& f, const std::vector<LocalTransition>& tr) {
    if (tr.size() != f.scope.size())
        throw ContractError("reward '" + f.name + "' expects " + std::to_string(f.scope.size()) + " transitions");
    std::vector<int> key;
    for (std::size_t k = 0; k < f.scope.size(); ++k)
        append_member_key(key, m.agents.at(f.scope[k]), f.view(static_cast<int>(k)), tr[k]);
    auto it = f.entries.find(key);
    return it == f.entries.end() ? f.default_value : it->second;
}

struct Violation {
    enum class Severity { error, warning };
    Severity severity = Severity::error;
    std::string subject;
    std::string message;
};

inline bool has_errors(const std::vector<Violation>& vs) {
    return std::any_of(vs.begin(), vs.end(), [](const Violation& v) { return v.severity == Violation::Severity::error; });
}

namespace detail {

inline std::string agent_subject(const Instance& m, AgentId i) {
    std::string s = "agent " + std::to_string(i);
    if (!m.agents[i].name.empty())
        s += " (" + m.agents[i].name + ")";
    return s;
}

// Local states reachable at each stage 0..h under every action.
inline std::vector<std::vector<char>> local_reachability(const LocalModel& model, StateId start, int horizon) {
    std::vector<std::vector<char>> reach(horizon + 1, std::vector<char>(model.num_states(), 0));
    if (start < 0 || start >= model.num_states())
        return reach;
    reach[0][start] = 1;
    for (int t = 0; t < horizon; ++t)
        for (StateId s = 0; s < model.num_states(); ++s) {
            if (!reach[t][s])
                continue;
            for (ActionId a = 0; a < model.num_actions(); ++a)
                for (const auto& o : model.outcomes(s, a))
                    if (o.probability > 0 && o.next >= 0 && o.next < model.num_states())
                        reach[t + 1][o.next] = 1;
        }
    return reach;
}

} // namespace detail

// Checks every structural invariant of an instance. Errors make the instance
// unusable; warnings (unreachable states, unfinishable work) are reported only.
inline std::vector<Violation> validate_instance(const Instance& m) {
    using Sev = Violation::Severity;
    std::vector<Violation> out;
    auto error = [&](std::string subject, std::string msg) { out.push_back({Sev::error, std::move(subject), std::move(msg)}); };

    if (m.horizon < 1)
        error("instance", "horizon must be at least 1, got " + std::to_string(m.horizon));
    if (m.agents.empty())
        error("instance", "no agents");
    if (static_cast<int>(m.initial.size()) != m.num_agents())
        error("initial_state", "has " + std::to_string(m.initial.size()) + " entries for " +
                                   std::to_string(m.num_agents()) + " agents");

    for (AgentId i = 0; i < m.num_agents(); ++i) {
        const auto& model = m.agents[i];
        const auto subject = detail::agent_subject(m, i);
        const auto nf = model.feature_names.size();
        if (model.num_states() == 0)
            error(subject, "has no states");
        if (model.num_actions() == 0)
            error(subject, "has no actions");
        for (StateId s = 0; s < model.num_states(); ++s) {
            if (model.states[s].id != s)
                error(subject, "state ids are not dense at position " + std::to_string(s));
            if (model.states[s].features.size() != nf)
                error(subject, "state " + std::to_string(s) + " has " + std::to_string(model.states[s].features.size()) +
                                   " feature values for " + std::to_string(nf) + " features");
        }
        for (ActionId a = 0; a < model.num_actions(); ++a)
            if (model.actions[a].id != a)
                error(subject, "action ids are not dense at position " + std::to_string(a));
        for (StateId s = 0; s < model.num_states(); ++s)
            for (ActionId a = 0; a < model.num_actions(); ++a) {
                const auto& list = model.outcomes(s, a);
                if (list.empty())
                    continue;
                const std::string where = "T(" + std::to_string(s) + ", " + std::to_string(a) + ")";
                double sum = 0.0;
                StateId prev = -1;
                for (const auto& o : list) {
                    if (o.next < 0 || o.next >= model.num_states())
                        error(subject, where + " leads to unknown state " + std::to_string(o.next));
                    if (!std::isfinite(o.probability) || o.probability <= 0.0 || o.probability > 1.0)
                        error(subject, where + " has probability outside (0, 1]");
                    if (o.next == prev)
                        error(subject, where + " lists state " + std::to_string(o.next) + " twice");
                    prev = o.next;
                    sum += o.probability;
                }
                if (std::abs(sum - 1.0) > probability_tolerance)
                    error(subject, where + " probabilities sum to " + std::to_string(sum));
            }
        if (i < static_cast<int>(m.initial.size())) {
            const StateId s0 = m.initial[i];
            if (s0 < 0 || s0 >= model.num_states()) {
                error(subject, "initial state " + std::to_string(s0) + " does not exist");
            } else if (m.horizon >= 1) {
                auto reach = detail::local_reachability(model, s0, m.horizon);
                std::vector<char> ever(model.num_states(), 0);
                for (int t = 0; t <= m.horizon; ++t)
                    for (StateId s = 0; s < model.num_states(); ++s) {
                        if (!reach[t][s])
                            continue;
                        ever[s] = 1;
                        if (t < m.horizon && model.available_actions(s).empty())
                            error(subject, "state " + std::to_string(s) + " is reachable at stage " + std::to_string(t) +
                                               " but has no available action");
                    }
                for (StateId s = 0; s < model.num_states(); ++s)
                    if (!ever[s])
                        out.push_back({Sev::warning, subject, "state " + std::to_string(s) + " is unreachable within the horizon"});
            }
        }
    }

    for (std::size_t r = 0; r < m.rewards.size(); ++r) {
        const auto& f = m.rewards[r];
        const std::string subject = "reward " + std::to_string(r) + (f.name.empty() ? "" : " (" + f.name + ")");
        if (f.scope.empty()) {
            error(subject, "scope is empty");
            continue;
        }
        bool scope_ok = std::is_sorted(f.scope.begin(), f.scope.end()) &&
                        std::adjacent_find(f.scope.begin(), f.scope.end()) == f.scope.end();
        if (!scope_ok)
            error(subject, "scope must be strictly ascending");
        for (AgentId j : f.scope)
            if (j < 0 || j >= m.num_agents()) {
                error(subject, "scope names agent " + std::to_string(j) + " which does not exist");
                scope_ok = false;
            }
        if (!std::isfinite(f.default_value))
            error(subject, "default value is not finite");
        if (f.owner && f.position(*f.owner) < 0)
            error(subject, "owner " + std::to_string(*f.owner) + " is outside the scope");
        if (!f.views.empty() && f.views.size() != f.scope.size()) {
            error(subject, "has " + std::to_string(f.views.size()) + " views for a scope of " + std::to_string(f.scope.size()));
            continue;
        }
        if (!scope_ok)
            continue;
        std::size_t key_len = 0;
        for (std::size_t k = 0; k < f.scope.size(); ++k) {
            const auto& view = f.view(static_cast<int>(k));
            const auto& model = m.agents[f.scope[k]];
            if (view)
                for (FeatureId fid : *view)
                    if (fid < 0 || fid >= static_cast<int>(model.feature_names.size()))
                        error(subject, "view of agent " + std::to_string(f.scope[k]) + " names unknown feature " +
                                           std::to_string(fid));
            key_len += 1 + 2 * (view ? view->size() : 1);
        }
        for (const auto& [key, value] : f.entries) {
            if (key.size() != key_len) {
                error(subject, "entry key has length " + std::to_string(key.size()) + ", expected " + std::to_string(key_len));
                break;
            }
            if (!std::isfinite(value)) {
                error(subject, "entry value is not finite");
                break;
            }
        }
    }
    return out;
}

namespace detail {

inline void check_dims(const Instance& m, const JointState& s, const JointAction& a) {
    if (static_cast<int>(s.size()) != m.num_agents() || static_cast<int>(a.size()) != m.num_agents())
        throw ContractError("joint state/action dimension does not match " + std::to_string(m.num_agents()) + " agents");
}

} // namespace detail

inline double joint_transition_probability(const Instance& m, const JointState& s, const JointAction& a,
                                           const JointState& next) {
    detail::check_dims(m, s, a);
    if (static_cast<int>(next.size()) != m.num_agents())
        throw ContractError("next joint state dimension does not match agent count");
    double p = 1.0;
    for (AgentId i = 0; i < m.num_agents(); ++i) {
        p *= m.agents[i].probability(s[i], a[i], next[i]);
        if (p == 0.0)
            return 0.0;
    }
    return p;
}

inline std::vector<LocalTransition> project(const RewardFunction& f, const JointState& s, const JointAction& a,
                                            const JointState& next) {
    std::vector<LocalTransition> tr;
    tr.reserve(f.scope.size());
    for (AgentId j : f.scope)
        tr.push_back({s.at(j), a.at(j), next.at(j)});
    return tr;
}

// Sum of every reward function on the joint transition, in reward-list order.
inline double total_reward(const Instance& m, const JointState& s, const JointAction& a, const JointState& next) {
    detail::check_dims(m, s, a);
    double total = 0.0;
    for (const auto& f : m.rewards)
        total += reward_value(m, f, project(f, s, a, next));
    return total;
}

struct ExecutionSequence {
    std::vector<JointState> states;   // s_0 .. s_t
    std::vector<JointAction> actions; // a_0 .. a_{t-1}

    int t() const { return static_cast<int>(actions.size()); }
};

struct SequenceReturn {
    double total = 0.0;
    std::vector<double> per_component; // indexed like Instance::rewards
};

inline SequenceReturn sequence_return(const Instance& m, const ExecutionSequence& phi) {
    if (phi.states.size() != phi.actions.size() + 1)
        throw ContractError("execution sequence needs exactly one more state than actions");
    if (phi.states.front() != m.initial)
        throw ContractError("execution sequence does not start in the initial state");
    if (phi.t() > m.horizon)
        throw ContractError("execution sequence is longer than the horizon");
    SequenceReturn out;
    out.per_component.assign(m.rewards.size(), 0.0);
    for (int x = 0; x < phi.t(); ++x) {
        const auto& s = phi.states[x];
        const auto& a = phi.actions[x];
        const auto& next = phi.states[x + 1];
        if (joint_transition_probability(m, s, a, next) <= 0.0)
            throw ContractError("step " + std::to_string(x) + " of the execution sequence has probability 0");
        double step = 0.0;
        for (std::size_t r = 0; r < m.rewards.size(); ++r) {
            const double v = reward_value(m, m.rewards[r], project(m.rewards[r], s, a, next));
            out.per_component[r] += v;
            step += v;
        }
        out.total += step;
    }
    return out;
}

struct JointOutcome {
    JointState state;
    double probability = 0.0;
};

// Cartesian product of the local outcome lists, lexicographic with agent 0
// most significant.
inline std::vector<JointOutcome> enumerate_successors(const Instance& m, const JointState& s, const JointAction& a) {
    detail::check_dims(m, s, a);
    const int n = m.num_agents();
    std::vector<const std::vector<Outcome>*> lists(n);
    for (AgentId i = 0; i < n; ++i) {
        lists[i] = &m.agents[i].outcomes(s[i], a[i]);
        if (lists[i]->empty())
            throw ContractError("action " + std::to_string(a[i]) + " is not available to agent " + std::to_string(i) +
                                " in state " + std::to_string(s[i]));
    }
    std::vector<JointOutcome> out;
    std::vector<std::size_t> idx(n, 0);
    while (true) {
        JointOutcome o{JointState(n), 1.0};
        for (AgentId i = 0; i < n; ++i) {
            const auto& lo = (*lists[i])[idx[i]];
            o.state[i] = lo.next;
            o.probability *= lo.probability;
        }
        out.push_back(std::move(o));
        int i = n - 1;
        while (i >= 0 && ++idx[i] == lists[i]->size())
            idx[i--] = 0;
        if (i < 0)
            break;
    }
    return out;
}

// Joint actions available in s, lexicographic by action-id vector.
inline std::vector<JointAction> available_joint_actions(const Instance& m, const JointState& s) {
    const int n = m.num_agents();
    std::vector<std::vector<ActionId>> local(n);
    for (AgentId i = 0; i < n; ++i) {
        local[i] = m.agents[i].available_actions(s.at(i));
        if (local[i].empty())
            return {};
    }
    std::vector<JointAction> out;
    std::vector<std::size_t> idx(n, 0);
    while (true) {
        JointAction a(n);
        for (AgentId i = 0; i < n; ++i)
            a[i] = local[i][idx[i]];
        out.push_back(std::move(a));
        int i = n - 1;
        while (i >= 0 && ++idx[i] == local[i].size())
            idx[i--] = 0;
        if (i < 0)
            break;
    }
    return out;
}

// Scales every outcome list to sum to one. Only applied on request.
inline void renormalize(LocalModel& model) {
    for (StateId s = 0; s < model.num_states(); ++s)
        for (ActionId a = 0; a < model.num_actions(); ++a) {
            auto list = model.outcomes(s, a);
            double sum = 0.0;
            for (const auto& o : list)
                sum += o.probability;
            if (list.empty() || sum <= 0.0)
                continue;
            for (auto& o : list)
                o.probability /= sum;
            model.set_outcomes(s, a, std::move(list));
        }
}

// Reward function with interned keys: every state of a scope member maps to a
// small key index and the table is a hash map over mixed-radix codes. Used on
// hot paths; reward_value stays the reference implementation.
class CompiledReward {
public:
    CompiledReward(const Instance& m, const RewardFunction& f) : default_(f.default_value) {
        const int k_count = static_cast<int>(f.scope.size());
        key_of_state_.resize(k_count);
        num_keys_.resize(k_count);
        num_actions_.resize(k_count);
        radix_.resize(k_count);
        std::vector<std::map<std::vector<int>, int>> intern(k_count);
        for (int k = 0; k < k_count; ++k) {
            const auto& model = m.agents.at(f.scope[k]);
            for (StateId s = 0; s < model.num_states(); ++s) {
                auto key = view_key(model, f.view(k), s);
                auto [it, inserted] = intern[k].emplace(std::move(key), static_cast<int>(intern[k].size()));
                key_of_state_[k].push_back(it->second);
            }
            num_keys_[k] = static_cast<int>(intern[k].size());
            num_actions_[k] = model.num_actions();
        }
        std::uint64_t mult = 1;
        for (int k = k_count - 1; k >= 0; --k) {
            radix_[k] = mult;
            const std::uint64_t span = static_cast<std::uint64_t>(num_keys_[k]) * num_keys_[k] * std::max(1, num_actions_[k]);
            if (span != 0 && mult > UINT64_MAX / span)
                throw ResourceError("reward '" + f.name + "' key space does not fit in 64 bits");
            mult *= span;
        }
        for (const auto& [key, value] : f.entries) {
            std::size_t pos = 0;
            std::uint64_t code = 0;
            bool known = true;
            for (int k = 0; k < k_count && known; ++k) {
                const std::size_t len = f.view(k) ? f.view(k)->size() : 1;
                if (pos + 2 * len + 1 > key.size()) {
                    known = false;
                    break;
                }
                std::vector<int> from(key.begin() + pos, key.begin() + pos + len);
                const int action = key[pos + len];
                std::vector<int> to(key.begin() + pos + len + 1, key.begin() + pos + 2 * len + 1);
                pos += 2 * len + 1;
                auto fi = intern[k].find(from);
                auto ti = intern[k].find(to);
                if (fi == intern[k].end() || ti == intern[k].end() || action < 0 || action >= num_actions_[k]) {
                    known = false;
                    break;
                }
                code += member_code(k, fi->second, action, ti->second);
            }
            if (known)
                values_[code] = value;
        }
    }

    int members() const { return static_cast<int>(key_of_state_.size()); }
    int key_of(int k, StateId s) const { return key_of_state_[k][s]; }
    int num_keys(int k) const { return num_keys_[k]; }
    int num_actions(int k) const { return num_actions_[k]; }
    double default_value() const { return default_; }

    std::uint64_t member_code(int k, int from_key, ActionId a, int to_key) const {
        return ((static_cast<std::uint64_t>(from_key) * std::max(1, num_actions_[k]) + a) * num_keys_[k] + to_key) *
               radix_[k];
    }

    std::uint64_t transition_code(int k, const LocalTransition& tr) const {
        return member_code(k, key_of_state_[k][tr.from], tr.action, key_of_state_[k][tr.to]);
    }

    double value_of_code(std::uint64_t code) const {
        auto it = values_.find(code);
        return it == values_.end() ? default_ : it->second;
    }

    // `tr` aligned with the scope.
    double value(const LocalTransition* tr) const {
        std::uint64_t code = 0;
        for (int k = 0; k < members(); ++k)
            code += transition_code(k, tr[k]);
        return value_of_code(code);
    }

    bool all_default_zero() const { return values_.empty() && default_ == 0.0; }

private:
    double default_;
    std::vector<std::vector<int>> key_of_state_;
    std::vector<int> num_keys_;
    std::vector<int> num_actions_;
    std::vector<std::uint64_t> radix_;
    std::unordered_map<std::uint64_t, double> values_;
};

class RewardEvaluator {
public:
    explicit RewardEvaluator(const Instance& m) : m_(&m) {
        compiled_.reserve(m.rewards.size());
        for (const auto& f : m.rewards)
            compiled_.emplace_back(m, f);
    }

    const CompiledReward& function(std::size_t r) const { return compiled_[r]; }

    double value(std::size_t r, const JointState& s, const JointAction& a, const JointState& next) const {
        const auto& f = m_->rewards[r];
        LocalTransition buf[16];
        std::vector<LocalTransition> heap;
        LocalTransition* tr = buf;
        if (f.scope.size() > 16) {
            heap.resize(f.scope.size());
            tr = heap.data();
        }
        for (std::size_t k = 0; k < f.scope.size(); ++k)
            tr[k] = {s[f.scope[k]], a[f.scope[k]], next[f.scope[k]]};
        return compiled_[r].value(tr);
    }

    double total(const JointState& s, const JointAction& a, const JointState& next) const {
        double sum = 0.0;
        for (std::size_t r = 0; r < compiled_.size(); ++r)
            sum += value(r, s, a, next);
        return sum;
    }

private:
    const Instance* m_;
    std::vector<CompiledReward> compiled_;
};

} // namespace timmdp
