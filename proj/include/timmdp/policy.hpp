#pragma once

#include "errors.hpp"
#include "model.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace timmdp {

inline std::string format_state(const JointState& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i)
        os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Decisions keyed by (stage, agent subset, states of that subset). A full
// joint action is composed from the entries whose subsets partition the
// agents; the subsets recorded by one search form a laminar family, so taking
// the largest matching subset first is unambiguous.
class Policy {
public:
    struct Entry {
        int t = 0;
        std::vector<AgentId> agents;
        std::vector<StateId> states;
        std::vector<ActionId> actions;
    };

    void set(int t, std::vector<AgentId> agents, std::vector<StateId> states, std::vector<ActionId> actions) {
        if (agents.size() != states.size() || agents.size() != actions.size())
            throw ContractError("policy entry dimensions differ");
        if (!std::is_sorted(agents.begin(), agents.end()))
            throw ContractError("policy entry agents must be ascending");
        if (t >= static_cast<int>(stages_.size()))
            stages_.resize(t + 1);
        stages_[t][std::move(agents)][std::move(states)] = std::move(actions);
    }

    // Convenience for full-joint decisions.
    void set_joint(int t, const JointState& s, const JointAction& a) {
        std::vector<AgentId> all(s.size());
        for (std::size_t i = 0; i < s.size(); ++i)
            all[i] = static_cast<AgentId>(i);
        set(t, std::move(all), s, a);
    }

    std::optional<JointAction> action(int t, const JointState& s) const {
        if (t < 0 || t >= static_cast<int>(stages_.size()))
            return std::nullopt;
        const auto& groups = stages_[t];
        std::vector<const std::vector<AgentId>*> order;
        for (const auto& [agents, table] : groups)
            order.push_back(&agents);
        std::stable_sort(order.begin(), order.end(),
                         [](const auto* x, const auto* y) { return x->size() > y->size(); });
        JointAction out(s.size(), -1);
        std::vector<char> covered(s.size(), 0);
        std::size_t remaining = s.size();
        std::vector<StateId> key;
        for (const auto* agents : order) {
            if (remaining == 0)
                break;
            bool free = true;
            for (AgentId i : *agents)
                if (i < 0 || i >= static_cast<int>(s.size()) || covered[i]) {
                    free = false;
                    break;
                }
            if (!free)
                continue;
            key.clear();
            for (AgentId i : *agents)
                key.push_back(s[i]);
            const auto& table = groups.at(*agents);
            auto it = table.find(key);
            if (it == table.end())
                continue;
            for (std::size_t k = 0; k < agents->size(); ++k) {
                out[(*agents)[k]] = it->second[k];
                covered[(*agents)[k]] = 1;
            }
            remaining -= agents->size();
        }
        if (remaining != 0)
            return std::nullopt;
        return out;
    }

    JointAction require(int t, const JointState& s) const {
        auto a = action(t, s);
        if (!a)
            throw ContractError("policy undefined at stage " + std::to_string(t) + ", state " + format_state(s));
        return *a;
    }

    std::vector<Entry> entries() const {
        std::vector<Entry> out;
        for (int t = 0; t < static_cast<int>(stages_.size()); ++t)
            for (const auto& [agents, table] : stages_[t])
                for (const auto& [states, actions] : table)
                    out.push_back({t, agents, states, actions});
        return out;
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& groups : stages_)
            for (const auto& [agents, table] : groups)
                n += table.size();
        return n;
    }

    bool empty() const { return size() == 0; }

    bool operator==(const Policy&) const = default;

private:
    using Table = std::map<std::vector<StateId>, std::vector<ActionId>>;
    std::vector<std::map<std::vector<AgentId>, Table>> stages_;
};

} // namespace timmdp
