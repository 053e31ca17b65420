#pragma once

#include "errors.hpp"
#include "model.hpp"

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace timmdp {

// R_i for every agent: indices into Instance::rewards, ascending.
struct RewardPartition {
    std::vector<std::vector<int>> assignment;

    const std::vector<int>& of(AgentId i) const { return assignment.at(i); }

    std::optional<AgentId> owner_of(int reward) const {
        for (AgentId i = 0; i < static_cast<int>(assignment.size()); ++i)
            if (std::binary_search(assignment[i].begin(), assignment[i].end(), reward))
                return i;
        return std::nullopt;
    }
};

inline void check_partition(const Instance& m, const RewardPartition& p) {
    if (static_cast<int>(p.assignment.size()) != m.num_agents())
        throw PartitionError("partition has " + std::to_string(p.assignment.size()) + " agents, instance has " +
                             std::to_string(m.num_agents()));
    std::vector<int> owner(m.rewards.size(), -1);
    for (AgentId i = 0; i < m.num_agents(); ++i)
        for (int r : p.assignment[i]) {
            if (r < 0 || r >= static_cast<int>(m.rewards.size()))
                throw PartitionError("agent " + std::to_string(i) + " is assigned unknown reward " + std::to_string(r));
            const auto& f = m.rewards[r];
            if (owner[r] != -1)
                throw PartitionError("reward '" + f.name + "' is assigned to agents " + std::to_string(owner[r]) + " and " +
                                     std::to_string(i));
            if (f.position(i) < 0)
                throw PartitionError("reward '" + f.name + "' is assigned to agent " + std::to_string(i) +
                                     " outside its scope");
            owner[r] = i;
        }
    for (std::size_t r = 0; r < m.rewards.size(); ++r)
        if (owner[r] == -1)
            throw PartitionError("reward '" + m.rewards[r].name + "' is not assigned to any agent");
}

// Every reward r goes to owners[r].
inline RewardPartition partition_fixed(const Instance& m, const std::vector<AgentId>& owners) {
    if (owners.size() != m.rewards.size())
        throw PartitionError("fixed assignment lists " + std::to_string(owners.size()) + " owners for " +
                             std::to_string(m.rewards.size()) + " rewards");
    RewardPartition p;
    p.assignment.resize(m.num_agents());
    for (std::size_t r = 0; r < owners.size(); ++r) {
        if (owners[r] < 0 || owners[r] >= m.num_agents())
            throw PartitionError("reward '" + m.rewards[r].name + "' is assigned to unknown agent " +
                                 std::to_string(owners[r]));
        p.assignment[owners[r]].push_back(static_cast<int>(r));
    }
    check_partition(m, p);
    return p;
}

namespace detail {

inline RewardPartition partition_greedy(const Instance& m, bool honour_owner_fields) {
    RewardPartition p;
    p.assignment.resize(m.num_agents());
    std::vector<int> pending;
    for (std::size_t r = 0; r < m.rewards.size(); ++r) {
        const auto& f = m.rewards[r];
        if (f.scope.empty())
            throw PartitionError("reward '" + f.name + "' has an empty scope");
        if (f.is_local())
            p.assignment.at(f.scope[0]).push_back(static_cast<int>(r));
        else if (honour_owner_fields && f.owner)
            p.assignment.at(*f.owner).push_back(static_cast<int>(r));
        else
            pending.push_back(static_cast<int>(r));
    }
    for (int r : pending) {
        AgentId best = -1;
        for (AgentId j : m.rewards[r].scope)
            if (best == -1 || p.assignment.at(j).size() < p.assignment[best].size())
                best = j;
        p.assignment[best].push_back(r);
    }
    for (auto& list : p.assignment)
        std::sort(list.begin(), list.end());
    check_partition(m, p);
    return p;
}

} // namespace detail

// Local rewards go to their agent; each interaction reward, in list order,
// goes to the in-scope agent holding the fewest functions (lowest id on ties).
inline RewardPartition partition_balanced(const Instance& m) { return detail::partition_greedy(m, false); }

// Balanced, except that rewards carrying an explicit owner keep it.
inline RewardPartition default_partition(const Instance& m) { return detail::partition_greedy(m, true); }

enum class PartitionStrategy { balanced, fixed };

inline RewardPartition partition_rewards(const Instance& m, PartitionStrategy strategy,
                                         const std::vector<AgentId>& owners = {}) {
    if (strategy == PartitionStrategy::balanced)
        return partition_balanced(m);
    if (owners.empty()) {
        std::vector<AgentId> from_fields;
        for (const auto& f : m.rewards) {
            if (f.is_local())
                from_fields.push_back(f.scope[0]);
            else if (f.owner)
                from_fields.push_back(*f.owner);
            else
                throw PartitionError("reward '" + f.name + "' has no owner for the fixed strategy");
        }
        return partition_fixed(m, from_fields);
    }
    return partition_fixed(m, owners);
}

namespace detail {

// Per-owner view of R_i used to evaluate dependent actions and influences.
// Everything works on interned keys so that counterfactual substitutions
// are additions on a mixed-radix code.
class OwnerAnalysis {
public:
    struct Proto {
        std::uint64_t code;
        ActionId action;
        int from_key;
        int to_key;
    };

    struct Function {
        int reward = -1;
        CompiledReward table;
        int owner_pos = -1;
        std::vector<AgentId> members;
        std::vector<int> tree_pos; // per member; -1 for the owner
        std::vector<std::vector<Proto>> protos;
    };

    struct KeyScheme {
        std::optional<std::vector<FeatureId>> features; // nullopt: full state id
        std::vector<int> key_of_state;
        std::vector<std::vector<int>> key_values;
    };

    OwnerAnalysis(const Instance& m, AgentId owner, const std::vector<int>& rewards) : m_(&m), owner_(owner) {
        std::set<AgentId> others;
        for (int r : rewards)
            for (AgentId j : m.rewards.at(r).scope)
                if (j != owner)
                    others.insert(j);
        tree_agents_.assign(others.begin(), others.end());
        if (tree_agents_.size() > 63)
            throw ResourceError("agent " + std::to_string(owner) + " interacts with more than 63 agents");
        possible_.resize(m.num_agents());
        possible_actions_.resize(m.num_agents());
        auto load = [&](AgentId j) {
            if (!possible_[j].empty())
                return;
            possible_[j] = m.agents[j].transitions();
            std::set<ActionId> acts;
            for (const auto& tr : possible_[j])
                acts.insert(tr.action);
            possible_actions_[j].assign(acts.begin(), acts.end());
        };
        load(owner);
        for (AgentId j : tree_agents_)
            load(j);

        for (AgentId j : tree_agents_) {
            KeyScheme ks;
            bool full = false;
            std::set<FeatureId> feats;
            for (int r : rewards) {
                const auto& f = m.rewards[r];
                const int k = f.position(j);
                if (k < 0)
                    continue;
                if (!f.view(k))
                    full = true;
                else
                    feats.insert(f.view(k)->begin(), f.view(k)->end());
            }
            if (!full)
                ks.features = std::vector<FeatureId>(feats.begin(), feats.end());
            std::map<std::vector<int>, int> intern;
            for (StateId s = 0; s < m.agents[j].num_states(); ++s) {
                auto key = view_key(m.agents[j], ks.features, s);
                auto [it, inserted] = intern.emplace(key, static_cast<int>(ks.key_values.size()));
                if (inserted)
                    ks.key_values.push_back(key);
                ks.key_of_state.push_back(it->second);
            }
            keys_.push_back(std::move(ks));
        }

        for (int r : rewards) {
            const auto& f = m.rewards[r];
            Function F{r, CompiledReward(m, f), f.position(owner), f.scope, {}, {}};
            F.tree_pos.resize(f.scope.size(), -1);
            F.protos.resize(f.scope.size());
            for (int k = 0; k < static_cast<int>(f.scope.size()); ++k) {
                if (k == F.owner_pos)
                    continue;
                F.tree_pos[k] = tree_position(f.scope[k]);
                std::set<std::uint64_t> seen;
                for (const auto& tr : possible_[f.scope[k]]) {
                    const auto code = F.table.transition_code(k, tr);
                    if (seen.insert(code).second)
                        F.protos[k].push_back(
                            {code, tr.action, F.table.key_of(k, tr.from), F.table.key_of(k, tr.to)});
                }
            }
            functions_.push_back(std::move(F));
        }
    }

    AgentId owner() const { return owner_; }
    const std::vector<AgentId>& tree_agents() const { return tree_agents_; }
    const std::vector<Function>& functions() const { return functions_; }
    const KeyScheme& keys(int pos) const { return keys_[pos]; }
    const std::vector<LocalTransition>& possible(AgentId j) const { return possible_[j]; }
    const std::vector<ActionId>& possible_actions(AgentId j) const { return possible_actions_[j]; }

    int tree_position(AgentId j) const {
        auto it = std::lower_bound(tree_agents_.begin(), tree_agents_.end(), j);
        return it != tree_agents_.end() && *it == j ? static_cast<int>(it - tree_agents_.begin()) : -1;
    }

    std::pair<int, int> pair_key(int pos, const LocalTransition& tr) const {
        return {keys_[pos].key_of_state[tr.from], keys_[pos].key_of_state[tr.to]};
    }

    // Calls fn(code) for every combination of prototypes of the members other
    // than the owner and `skip`, added to `base`. Stops when fn returns true.
    bool any_combo(const Function& F, int skip, std::uint64_t base,
                   const std::function<bool(std::uint64_t)>& fn) const {
        const int count = static_cast<int>(F.members.size());
        std::function<bool(int, std::uint64_t)> rec = [&](int k, std::uint64_t code) -> bool {
            if (k == count)
                return fn(code);
            if (k == F.owner_pos || k == skip)
                return rec(k + 1, code);
            for (const auto& p : F.protos[k])
                if (rec(k + 1, code + p.code))
                    return true;
            return false;
        };
        return rec(0, base);
    }

    // Literal dependent-action test for one function: some possible joint
    // transition containing tr and j's action a has nonzero reward, and some
    // other action of j in its place changes that reward.
    bool dependent(const Function& F, const LocalTransition& tr, AgentId j, ActionId a) const {
        const int kj = static_cast<int>(std::find(F.members.begin(), F.members.end(), j) - F.members.begin());
        if (kj >= static_cast<int>(F.members.size()) || kj == F.owner_pos)
            return false;
        const int n_actions = F.table.num_actions(kj);
        const std::uint64_t base = F.table.transition_code(F.owner_pos, tr);
        for (const auto& pj : F.protos[kj]) {
            if (pj.action != a)
                continue;
            const bool found = any_combo(F, kj, base + pj.code, [&](std::uint64_t code) {
                const double v = F.table.value_of_code(code);
                if (v == 0.0)
                    return false;
                const std::uint64_t rest = code - pj.code;
                for (ActionId b = 0; b < n_actions; ++b) {
                    if (b == a)
                        continue;
                    if (F.table.value_of_code(rest + F.table.member_code(kj, pj.from_key, b, pj.to_key)) != v)
                        return true;
                }
                return false;
            });
            if (found)
                return true;
        }
        return false;
    }

    std::set<ActionId> dependent_actions(const LocalTransition& tr, AgentId j) const {
        std::set<ActionId> out;
        for (ActionId a : possible_actions_[j])
            for (const auto& F : functions_)
                if (dependent(F, tr, j, a)) {
                    out.insert(a);
                    break;
                }
        return out;
    }

    // Influence pairs (CRG keys of j) for one function under the actions
    // flagged in `mask`.
    void influence(const Function& F, const LocalTransition& tr, AgentId j, const std::vector<char>& mask,
                   std::set<std::pair<int, int>>& out) const {
        const int kj = static_cast<int>(std::find(F.members.begin(), F.members.end(), j) - F.members.begin());
        if (kj >= static_cast<int>(F.members.size()) || kj == F.owner_pos)
            return;
        const int pos = tree_position(j);
        const int nk = F.table.num_keys(kj);
        const std::uint64_t base = F.table.transition_code(F.owner_pos, tr);
        std::unordered_map<std::uint64_t, bool> memo;
        for (const auto& trj : possible_[j]) {
            if (trj.action >= static_cast<int>(mask.size()) || !mask[trj.action])
                continue;
            const auto pk = pair_key(pos, trj);
            if (out.count(pk))
                continue;
            const std::uint64_t cj = F.table.transition_code(kj, trj);
            auto it = memo.find(cj);
            bool qualifies;
            if (it != memo.end()) {
                qualifies = it->second;
            } else {
                const int fk = F.table.key_of(kj, trj.from);
                const int tk = F.table.key_of(kj, trj.to);
                qualifies = any_combo(F, kj, base + cj, [&](std::uint64_t code) {
                    const double v = F.table.value_of_code(code);
                    if (v == 0.0)
                        return false;
                    const std::uint64_t rest = code - cj;
                    for (int k1 = 0; k1 < nk; ++k1)
                        for (int k2 = 0; k2 < nk; ++k2) {
                            if (k1 == fk && k2 == tk)
                                continue;
                            if (F.table.value_of_code(rest + F.table.member_code(kj, k1, trj.action, k2)) != v)
                                return true;
                        }
                    return false;
                });
                memo.emplace(cj, qualifies);
            }
            if (qualifies)
                out.insert(pk);
        }
    }

    std::set<std::pair<int, int>> influence_pairs(const LocalTransition& tr, AgentId j,
                                                  const std::vector<char>& mask) const {
        std::set<std::pair<int, int>> out;
        for (const auto& F : functions_)
            influence(F, tr, j, mask, out);
        return out;
    }

    std::vector<char> action_mask(AgentId j, const std::vector<ActionId>& actions) const {
        std::vector<char> mask(m_->agents[j].num_actions(), 0);
        for (ActionId a : actions)
            mask[a] = 1;
        return mask;
    }

    // Possible actions of j outside `dep`.
    std::vector<ActionId> wildcard_actions(AgentId j, const std::set<ActionId>& dep) const {
        std::vector<ActionId> out;
        for (ActionId a : possible_actions_[j])
            if (!dep.count(a))
                out.push_back(a);
        return out;
    }

private:
    const Instance* m_;
    AgentId owner_;
    std::vector<AgentId> tree_agents_;
    std::vector<KeyScheme> keys_;
    std::vector<Function> functions_;
    std::vector<std::vector<LocalTransition>> possible_;
    std::vector<std::vector<ActionId>> possible_actions_;
};

} // namespace detail

// Dependent actions of agent j for the owner's transition tr under the
// functions `rewards` (normally R_i).
inline std::set<ActionId> dependent_actions(const Instance& m, const std::vector<int>& rewards, AgentId owner,
                                            const LocalTransition& tr, AgentId j) {
    if (j == owner)
        throw ContractError("dependent actions are defined for other agents only");
    if (m.agents.at(owner).probability(tr.from, tr.action, tr.to) <= 0.0)
        throw ContractError("transition has zero probability");
    detail::OwnerAnalysis an(m, owner, rewards);
    if (an.tree_position(j) < 0)
        return {};
    return an.dependent_actions(tr, j);
}

using KeyPair = std::pair<std::vector<int>, std::vector<int>>;

// Influence of agent j's state pairs on the owner's transition tr, for
// action `a` of j or, when `a` is empty, for every non-dependent action of
// j. Keys are j's states as read by the functions in `rewards` (feature
// values when all of them use feature views, else the state id).
inline std::set<KeyPair> influence_set(const Instance& m, const std::vector<int>& rewards, AgentId owner,
                                       const LocalTransition& tr, AgentId j, std::optional<ActionId> a) {
    if (j == owner)
        throw ContractError("influence is defined for other agents only");
    detail::OwnerAnalysis an(m, owner, rewards);
    const int pos = an.tree_position(j);
    if (pos < 0)
        return {};
    std::vector<ActionId> actions;
    if (a)
        actions = {*a};
    else
        actions = an.wildcard_actions(j, an.dependent_actions(tr, j));
    std::set<KeyPair> out;
    for (const auto& [x, y] : an.influence_pairs(tr, j, an.action_mask(j, actions)))
        out.insert({an.keys(pos).key_values[x], an.keys(pos).key_values[y]});
    return out;
}

struct CrgArc {
    enum class Kind { action, any_action, pair, no_influence };
    Kind kind = Kind::action;
    int position = 0; // tree position of the agent the arc refers to
    ActionId action = -1;
    int from_key = -1;
    int to_key = -1;
    int child = -1;
};

struct CrgTerm {
    int reward = -1;
    double value = 0.0;
    std::uint64_t needs = 0; // tree positions that must be present for the term to apply
};

struct CrgLeafArc {
    StateId next = 0;
    double reward = 0.0; // sum of all terms
    std::uint32_t term_begin = 0;
    std::uint32_t term_count = 0;
};

struct CrgNode {
    enum class Kind { action_root, action_internal, influence_root, influence_internal, leaf };
    Kind kind = Kind::action_root;
    int level = 0;
    std::vector<CrgArc> arcs;
    std::vector<CrgLeafArc> leaf_arcs;
};

enum class BoundRule {
    // U and L are the largest and smallest returns over all paths.
    path,
    // Per action, the expectation over the agent's own outcomes of the best
    // (resp. worst) leaf; U and L take the best action.
    expected,
};

struct BuildOptions {
    // Keep only the locally optimal action at locally reward-independent nodes.
    bool local_cri_pruning = true;
    BoundRule bounds = BoundRule::path;
};

struct SizeAudit {
    std::vector<std::size_t> state_nodes;    // layers 0..h
    std::vector<std::size_t> internal_nodes; // tree nodes, layers 0..h-1
    std::vector<std::size_t> arcs;           // all arcs leaving layer t, including leaf arcs
    std::vector<std::size_t> leaf_arcs;      // reward arcs into layer t+1
    std::size_t measured_nodes = 0;
    std::size_t measured_arcs = 0;
    std::size_t measured = 0;
    int alpha = 0;      // most explicit action arcs at one action-tree level
    int rho = 0;        // largest interaction scope in R_i minus one
    int tree_depth = 0; // number of other agents in the owner's trees
    int i_max = 0;      // most explicit influence arcs at one influence-tree level
    int s_max = 0;
    int a_max = 0;
    int horizon = 0;
    std::uint64_t size_bound = 0;

    bool within_bound() const { return measured <= size_bound; }
};

class ConditionalReturnGraph {
public:
    ConditionalReturnGraph(const Instance& m, const RewardPartition& partition, AgentId owner, BuildOptions options = {})
        : m_(&m), owner_(owner), horizon_(m.horizon), options_(options) {
        if (owner < 0 || owner >= m.num_agents())
            throw ContractError("unknown agent " + std::to_string(owner));
        check_partition(m, partition);
        assigned_ = partition.of(owner);
        for (std::size_t r = 0; r < m.rewards.size(); ++r)
            if (m.rewards[r].scope.size() > 1 && m.rewards[r].position(owner) >= 0)
                involving_.push_back(static_cast<int>(r));
        detail::OwnerAnalysis an(m, owner, assigned_);
        tree_agents_ = an.tree_agents();
        for (int p = 0; p < static_cast<int>(tree_agents_.size()); ++p)
            keys_.push_back(an.keys(p));
        for (int r : assigned_)
            if (m.rewards[r].scope.size() > 1)
                rho_ = std::max(rho_, static_cast<int>(m.rewards[r].scope.size()) - 1);
        build_trees(an);
        analyse_local();
        compute_layers();
        compute_bounds();
    }

    AgentId owner() const { return owner_; }
    int horizon() const { return horizon_; }
    const Instance& instance() const { return *m_; }
    const BuildOptions& options() const { return options_; }
    const std::vector<int>& assigned() const { return assigned_; }
    const std::vector<int>& involving() const { return involving_; }
    const std::vector<AgentId>& tree_agents() const { return tree_agents_; }

    int tree_position(AgentId j) const {
        auto it = std::lower_bound(tree_agents_.begin(), tree_agents_.end(), j);
        return it != tree_agents_.end() && *it == j ? static_cast<int>(it - tree_agents_.begin()) : -1;
    }

    int num_states() const { return m_->agents[owner_].num_states(); }

    bool reachable(int t, StateId s) const { return node(t, s).reachable; }

    std::vector<StateId> layer(int t) const {
        std::vector<StateId> out;
        for (StateId s = 0; s < num_states(); ++s)
            if (node(t, s).reachable)
                out.push_back(s);
        return out;
    }

    const std::vector<ActionId>& kept_actions(int t, StateId s) const { return node(t, s).kept; }
    double lower(int t, StateId s) const { return node(t, s).lower; }
    double upper(int t, StateId s) const { return node(t, s).upper; }
    bool locally_cri(int t, StateId s) const { return node(t, s).cri; }
    double local_value(int t, StateId s) const { return node(t, s).local_value; }
    ActionId local_action(int t, StateId s) const { return node(t, s).local_action; }

    // False only if reward `r` can never again be nonzero through this agent's
    // transitions from (t, s).
    bool interaction_reachable(int t, StateId s, int r) const {
        auto it = std::lower_bound(involving_.begin(), involving_.end(), r);
        if (it == involving_.end() || *it != r)
            throw ContractError("reward " + std::to_string(r) + " is not an interaction reward of agent " +
                                std::to_string(owner_));
        if (t >= horizon_)
            return false;
        return node(t, s).live[it - involving_.begin()] != 0;
    }

    int tree_root(StateId s, ActionId a) const {
        const auto idx = static_cast<std::size_t>(s) * m_->agents[owner_].num_actions() + a;
        return idx < roots_.size() ? roots_[idx] : -1;
    }

    const CrgNode& tree_node(int id) const { return nodes_.at(id); }
    std::size_t num_tree_nodes() const { return nodes_.size(); }

    const CrgTerm* terms(const CrgLeafArc& leaf) const { return terms_.data() + leaf.term_begin; }

    std::string key_label(int pos, int key) const {
        const auto& ks = keys_.at(pos);
        const auto& model = m_->agents[tree_agents_[pos]];
        const auto& values = ks.key_values.at(key);
        if (!ks.features) {
            const auto& label = model.states.at(values.at(0)).label;
            return label.empty() ? "s" + std::to_string(values.at(0)) : label;
        }
        if (values.empty())
            return "-";
        std::string out;
        for (std::size_t k = 0; k < values.size(); ++k) {
            if (k)
                out += ",";
            out += model.feature_names.at((*ks.features)[k]) + "=" + std::to_string(values[k]);
        }
        return out;
    }

    std::vector<int> key_values(int pos, int key) const { return keys_.at(pos).key_values.at(key); }
    int key_of(int pos, StateId s) const { return keys_.at(pos).key_of_state.at(s); }

    // Walks the tree of (s, a) with the transitions of the tree agents in
    // `ctx` (indexed by tree position). Agents missing from `present` take
    // the first arc; terms that need them are skipped by reward().
    const CrgLeafArc& resolve(StateId s, ActionId a, StateId next, const LocalTransition* ctx,
                              std::uint64_t present) const {
        int id = tree_root(s, a);
        if (id < 0)
            throw InternalError("no tree for state " + std::to_string(s) + ", action " + std::to_string(a) +
                                " of agent " + std::to_string(owner_));
        while (!nodes_[id].arcs.empty()) {
            const auto& nd = nodes_[id];
            const int pos = nd.arcs.front().position;
            const bool acting = nd.arcs.front().kind == CrgArc::Kind::action ||
                                nd.arcs.front().kind == CrgArc::Kind::any_action;
            int child = -1;
            if (!((present >> pos) & 1U)) {
                child = nd.arcs.front().child;
            } else if (acting) {
                for (const auto& arc : nd.arcs)
                    if (arc.kind == CrgArc::Kind::action && arc.action == ctx[pos].action) {
                        child = arc.child;
                        break;
                    }
                if (child < 0)
                    for (const auto& arc : nd.arcs)
                        if (arc.kind == CrgArc::Kind::any_action) {
                            child = arc.child;
                            break;
                        }
            } else {
                const int fk = keys_[pos].key_of_state[ctx[pos].from];
                const int tk = keys_[pos].key_of_state[ctx[pos].to];
                for (const auto& arc : nd.arcs)
                    if (arc.kind == CrgArc::Kind::pair && arc.from_key == fk && arc.to_key == tk) {
                        child = arc.child;
                        break;
                    }
                if (child < 0)
                    for (const auto& arc : nd.arcs)
                        if (arc.kind == CrgArc::Kind::no_influence) {
                            child = arc.child;
                            break;
                        }
            }
            if (child < 0)
                throw InternalError("unresolvable tree path for agent " + std::to_string(owner_) + " at level " +
                                    std::to_string(nd.level));
            id = child;
        }
        for (const auto& leaf : nodes_[id].leaf_arcs)
            if (leaf.next == next)
                return leaf;
        throw InternalError("no reward arc to state " + std::to_string(next) + " for agent " + std::to_string(owner_));
    }

    // Sum of the leaf's terms whose agents are all present.
    double reward(const CrgLeafArc& leaf, std::uint64_t present) const {
        const std::uint64_t all = tree_agents_.empty() ? 0 : (tree_agents_.size() >= 64 ? ~0ULL : (1ULL << tree_agents_.size()) - 1);
        if ((present & all) == all)
            return leaf.reward;
        double sum = 0.0;
        const CrgTerm* term = terms(leaf);
        for (std::uint32_t k = 0; k < leaf.term_count; ++k)
            if ((term[k].needs & ~present) == 0)
                sum += term[k].value;
        return sum;
    }

    SizeAudit size_audit() const {
        SizeAudit audit;
        audit.horizon = horizon_;
        audit.s_max = num_states();
        audit.a_max = m_->agents[owner_].num_actions();
        audit.rho = rho_;
        audit.tree_depth = static_cast<int>(tree_agents_.size());
        audit.state_nodes.assign(horizon_ + 1, 0);
        audit.internal_nodes.assign(horizon_, 0);
        audit.arcs.assign(horizon_, 0);
        audit.leaf_arcs.assign(horizon_, 0);
        const int depth = audit.tree_depth;
        for (int t = 0; t <= horizon_; ++t)
            for (StateId s = 0; s < num_states(); ++s) {
                if (!node(t, s).reachable)
                    continue;
                ++audit.state_nodes[t];
                if (t == horizon_)
                    continue;
                for (ActionId a : node(t, s).kept) {
                    ++audit.arcs[t];
                    std::vector<int> stack{tree_root(s, a)};
                    while (!stack.empty()) {
                        const auto& nd = nodes_[stack.back()];
                        stack.pop_back();
                        ++audit.internal_nodes[t];
                        audit.arcs[t] += nd.arcs.size() + nd.leaf_arcs.size();
                        audit.leaf_arcs[t] += nd.leaf_arcs.size();
                        int explicit_arcs = 0;
                        for (const auto& arc : nd.arcs) {
                            stack.push_back(arc.child);
                            if (arc.kind == CrgArc::Kind::action || arc.kind == CrgArc::Kind::pair)
                                ++explicit_arcs;
                        }
                        if (nd.arcs.empty())
                            continue;
                        const auto kind = nd.arcs.front().kind;
                        if (kind == CrgArc::Kind::action || kind == CrgArc::Kind::any_action)
                            audit.alpha = std::max(audit.alpha, explicit_arcs);
                        else
                            audit.i_max = std::max(audit.i_max, explicit_arcs);
                    }
                }
            }
        for (int t = 0; t <= horizon_; ++t) {
            audit.measured_nodes += audit.state_nodes[t];
            if (t < horizon_) {
                audit.measured_nodes += audit.internal_nodes[t];
                audit.measured_arcs += audit.arcs[t];
            }
        }
        audit.measured = audit.measured_nodes + audit.measured_arcs;

        // h·|A|·|S|²·(α·I)^ρ with the constants of this construction made
        // explicit: per (state, action) one root and one arc, at most
        // 4d·b^d tree nodes and arcs and |S|·b^d reward arcs, b = (α+1)(I+1).
        auto mul = [](std::uint64_t x, std::uint64_t y) -> std::uint64_t {
            if (x != 0 && y > std::numeric_limits<std::uint64_t>::max() / x)
                return std::numeric_limits<std::uint64_t>::max();
            return x * y;
        };
        auto add = [](std::uint64_t x, std::uint64_t y) -> std::uint64_t {
            return y > std::numeric_limits<std::uint64_t>::max() - x ? std::numeric_limits<std::uint64_t>::max() : x + y;
        };
        const std::uint64_t S = audit.s_max, A = audit.a_max, H = audit.horizon;
        const std::uint64_t b = static_cast<std::uint64_t>(audit.alpha + 1) * (audit.i_max + 1);
        std::uint64_t bd = 1;
        for (int k = 0; k < depth; ++k)
            bd = mul(bd, b);
        const std::uint64_t per_action = add(2, mul(add(4 * static_cast<std::uint64_t>(depth), S), bd));
        audit.size_bound = add(mul(H + 1, S), mul(mul(mul(H, S), A), per_action));
        return audit;
    }

private:
    struct NodeInfo {
        bool reachable = false;
        bool cri = true;
        double lower = 0.0;
        double upper = 0.0;
        double local_value = 0.0;
        ActionId local_action = -1;
        std::vector<ActionId> kept;
        std::vector<char> live;
    };

    struct ClassSpec {
        bool wildcard = false;
        ActionId action = -1;
        std::vector<char> mask;
        std::vector<std::pair<int, int>> pairs;
        bool bottom = false;
    };

    const NodeInfo& node(int t, StateId s) const {
        if (t < 0 || t > horizon_ || s < 0 || s >= num_states())
            throw ContractError("no CRG node for stage " + std::to_string(t) + ", state " + std::to_string(s));
        return info_[static_cast<std::size_t>(t) * num_states() + s];
    }

    NodeInfo& node(int t, StateId s) { return info_[static_cast<std::size_t>(t) * num_states() + s]; }

    void build_trees(const detail::OwnerAnalysis& an) {
        const auto& model = m_->agents[owner_];
        roots_.assign(static_cast<std::size_t>(model.num_states()) * model.num_actions(), -1);
        for (StateId s = 0; s < model.num_states(); ++s)
            for (ActionId a = 0; a < model.num_actions(); ++a)
                if (model.available(s, a))
                    roots_[static_cast<std::size_t>(s) * model.num_actions() + a] = build_tree(an, s, a);
    }

    std::vector<ClassSpec> classes_for(const detail::OwnerAnalysis& an, int pos, StateId s, ActionId a,
                                       const std::vector<Outcome>& outs, bool forced) const {
        const AgentId j = tree_agents_[pos];
        const auto& possible = an.possible(j);
        std::vector<ClassSpec> classes;
        auto remaining_pairs = [&](const ClassSpec& c) {
            for (const auto& tr : possible)
                if (c.mask[tr.action] && !std::binary_search(c.pairs.begin(), c.pairs.end(), an.pair_key(pos, tr)))
                    return true;
            return false;
        };
        if (forced) {
            for (ActionId b : an.possible_actions(j)) {
                ClassSpec c;
                c.action = b;
                c.mask = an.action_mask(j, {b});
                std::set<std::pair<int, int>> pairs;
                for (const auto& tr : possible)
                    if (tr.action == b)
                        pairs.insert(an.pair_key(pos, tr));
                c.pairs.assign(pairs.begin(), pairs.end());
                classes.push_back(std::move(c));
            }
            return classes;
        }
        std::set<ActionId> dep;
        for (const auto& o : outs) {
            auto d = an.dependent_actions({s, a, o.next}, j);
            dep.insert(d.begin(), d.end());
        }
        auto pairs_for = [&](const std::vector<char>& mask) {
            std::set<std::pair<int, int>> pairs;
            for (const auto& o : outs) {
                auto p = an.influence_pairs({s, a, o.next}, j, mask);
                pairs.insert(p.begin(), p.end());
            }
            return std::vector<std::pair<int, int>>(pairs.begin(), pairs.end());
        };
        for (ActionId b : dep) {
            ClassSpec c;
            c.action = b;
            c.mask = an.action_mask(j, {b});
            c.pairs = pairs_for(c.mask);
            c.bottom = remaining_pairs(c);
            classes.push_back(std::move(c));
        }
        auto rest = an.wildcard_actions(j, dep);
        if (!rest.empty()) {
            ClassSpec c;
            c.wildcard = true;
            c.mask = an.action_mask(j, rest);
            c.pairs = pairs_for(c.mask);
            c.bottom = remaining_pairs(c);
            classes.push_back(std::move(c));
        }
        return classes;
    }

    int build_tree(const detail::OwnerAnalysis& an, StateId s, ActionId a) {
        const auto& outs = m_->agents[owner_].outcomes(s, a);
        const int depth = static_cast<int>(tree_agents_.size());
        std::vector<char> forced(depth, 0);
        while (true) {
            std::vector<std::vector<ClassSpec>> classes(depth);
            for (int p = 0; p < depth; ++p)
                classes[p] = classes_for(an, p, s, a, outs, forced[p]);
            // Agents whose only class is the wildcard with no influence arcs
            // cannot change R_i here; they get no levels.
            std::vector<int> branching;
            std::vector<int> chosen_class(depth, 0);
            std::vector<int> chosen_pair(depth, -1); // index into pairs, or -1 for the no-influence arc
            for (int p = 0; p < depth; ++p) {
                const auto& cs = classes[p];
                if (!(cs.size() == 1 && cs[0].wildcard && cs[0].pairs.empty()))
                    branching.push_back(p);
            }
            const int levels = static_cast<int>(branching.size());
            const std::size_t node_mark = nodes_.size();
            const std::size_t term_mark = terms_.size();
            std::vector<char> violators(depth, 0);
            bool uniform = true;

            std::function<int(int)> grow = [&](int level) -> int {
                const int id = static_cast<int>(nodes_.size());
                nodes_.emplace_back();
                nodes_[id].level = level;
                if (level == 0)
                    nodes_[id].kind = CrgNode::Kind::action_root;
                else if (level < levels)
                    nodes_[id].kind = CrgNode::Kind::action_internal;
                else if (level == levels)
                    nodes_[id].kind = CrgNode::Kind::influence_root;
                else if (level < 2 * levels)
                    nodes_[id].kind = CrgNode::Kind::influence_internal;
                else
                    nodes_[id].kind = CrgNode::Kind::leaf;
                if (level == 2 * levels) {
                    if (!fill_leaf(an, id, s, a, outs, classes, chosen_class, chosen_pair, violators))
                        uniform = false;
                    return id;
                }
                if (level < levels) {
                    const int pos = branching[level];
                    for (int c = 0; c < static_cast<int>(classes[pos].size()); ++c) {
                        chosen_class[pos] = c;
                        const int child = grow(level + 1);
                        CrgArc arc;
                        arc.kind = classes[pos][c].wildcard ? CrgArc::Kind::any_action : CrgArc::Kind::action;
                        arc.position = pos;
                        arc.action = classes[pos][c].action;
                        arc.child = child;
                        nodes_[id].arcs.push_back(arc);
                    }
                } else {
                    const int pos = branching[level - levels];
                    const auto& cls = classes[pos][chosen_class[pos]];
                    for (int k = 0; k < static_cast<int>(cls.pairs.size()); ++k) {
                        chosen_pair[pos] = k;
                        const int child = grow(level + 1);
                        CrgArc arc;
                        arc.kind = CrgArc::Kind::pair;
                        arc.position = pos;
                        arc.from_key = cls.pairs[k].first;
                        arc.to_key = cls.pairs[k].second;
                        arc.child = child;
                        nodes_[id].arcs.push_back(arc);
                    }
                    if (cls.bottom) {
                        chosen_pair[pos] = -1;
                        const int child = grow(level + 1);
                        CrgArc arc;
                        arc.kind = CrgArc::Kind::no_influence;
                        arc.position = pos;
                        arc.child = child;
                        nodes_[id].arcs.push_back(arc);
                    }
                    chosen_pair[pos] = -1;
                }
                return id;
            };

            const int root = grow(0);
            if (uniform)
                return root;
            // Some function still varies inside a leaf: resolve its agents
            // explicitly for this transition and rebuild.
            bool changed = false;
            for (int p = 0; p < depth; ++p)
                if (violators[p] && !forced[p]) {
                    forced[p] = 1;
                    changed = true;
                }
            if (!changed)
                throw InternalError("tree of agent " + std::to_string(owner_) + " cannot separate rewards");
            nodes_.resize(node_mark);
            terms_.resize(term_mark);
        }
    }

    bool fill_leaf(const detail::OwnerAnalysis& an, int id, StateId s, ActionId a, const std::vector<Outcome>& outs,
                   const std::vector<std::vector<ClassSpec>>& classes, const std::vector<int>& chosen_class,
                   const std::vector<int>& chosen_pair, std::vector<char>& violators) {
        const int depth = static_cast<int>(tree_agents_.size());
        // Transitions of each tree agent consistent with the path.
        std::vector<std::vector<LocalTransition>> consistent(depth);
        for (int p = 0; p < depth; ++p) {
            const auto& cls = classes[p][chosen_class[p]];
            for (const auto& tr : an.possible(tree_agents_[p])) {
                if (!cls.mask[tr.action])
                    continue;
                const auto pk = an.pair_key(p, tr);
                const bool listed = std::binary_search(cls.pairs.begin(), cls.pairs.end(), pk);
                if (chosen_pair[p] >= 0 ? pk == cls.pairs[chosen_pair[p]] : !listed)
                    consistent[p].push_back(tr);
            }
            if (consistent[p].empty())
                throw InternalError("empty tree path class");
        }
        bool uniform = true;
        for (const auto& o : outs) {
            CrgLeafArc leaf;
            leaf.next = o.next;
            leaf.term_begin = static_cast<std::uint32_t>(terms_.size());
            const LocalTransition own{s, a, o.next};
            for (const auto& F : an.functions()) {
                const int count = static_cast<int>(F.members.size());
                std::vector<std::vector<std::uint64_t>> codes(count);
                std::uint64_t needs = 0;
                for (int k = 0; k < count; ++k) {
                    if (k == F.owner_pos) {
                        codes[k] = {F.table.transition_code(k, own)};
                        continue;
                    }
                    const int p = F.tree_pos[k];
                    needs |= 1ULL << p;
                    std::set<std::uint64_t> distinct;
                    for (const auto& tr : consistent[p])
                        distinct.insert(F.table.transition_code(k, tr));
                    codes[k].assign(distinct.begin(), distinct.end());
                }
                double lo = std::numeric_limits<double>::infinity();
                double hi = -lo;
                std::function<void(int, std::uint64_t)> rec = [&](int k, std::uint64_t code) {
                    if (lo != hi && lo <= hi)
                        return;
                    if (k == count) {
                        const double v = F.table.value_of_code(code);
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                        return;
                    }
                    for (auto c : codes[k])
                        rec(k + 1, code + c);
                };
                rec(0, 0);
                if (lo != hi) {
                    uniform = false;
                    for (int k = 0; k < count; ++k)
                        if (k != F.owner_pos)
                            violators[F.tree_pos[k]] = 1;
                    continue;
                }
                if (lo != 0.0) {
                    terms_.push_back({F.reward, lo, needs});
                    leaf.reward += lo;
                }
            }
            leaf.term_count = static_cast<std::uint32_t>(terms_.size()) - leaf.term_begin;
            nodes_[id].leaf_arcs.push_back(leaf);
        }
        return uniform;
    }

    // Local optimal values, liveness of the interaction functions involving
    // the owner, and the CRI flags.
    void analyse_local() {
        const auto& model = m_->agents[owner_];
        const int S = model.num_states();
        info_.assign(static_cast<std::size_t>(horizon_ + 1) * S, NodeInfo{});

        std::vector<CompiledReward> locals;
        for (int r : assigned_)
            if (m_->rewards[r].is_local())
                locals.emplace_back(*m_, m_->rewards[r]);
        auto local_reward = [&](const LocalTransition& tr) {
            double v = 0.0;
            for (const auto& c : locals)
                v += c.value(&tr);
            return v;
        };

        // interacts[f][transition index]
        const auto transitions = model.transitions();
        std::map<LocalTransition, int> tindex;
        for (int k = 0; k < static_cast<int>(transitions.size()); ++k)
            tindex[transitions[k]] = k;
        std::vector<std::vector<char>> interacts(involving_.size());
        for (std::size_t fi = 0; fi < involving_.size(); ++fi) {
            detail::OwnerAnalysis an(*m_, owner_, {involving_[fi]});
            const auto& F = an.functions().front();
            interacts[fi].resize(transitions.size());
            for (std::size_t k = 0; k < transitions.size(); ++k) {
                const std::uint64_t base = F.table.transition_code(F.owner_pos, transitions[k]);
                interacts[fi][k] = an.any_combo(F, -1, base, [&](std::uint64_t code) {
                    return F.table.value_of_code(code) != 0.0;
                });
            }
        }

        for (StateId s = 0; s < S; ++s)
            node(horizon_, s).live.assign(involving_.size(), 0);
        for (int t = horizon_ - 1; t >= 0; --t)
            for (StateId s = 0; s < S; ++s) {
                auto& nd = node(t, s);
                nd.live.assign(involving_.size(), 0);
                double best = -std::numeric_limits<double>::infinity();
                for (ActionId a = 0; a < model.num_actions(); ++a) {
                    const auto& outs = model.outcomes(s, a);
                    if (outs.empty())
                        continue;
                    double q = 0.0;
                    for (const auto& o : outs) {
                        const LocalTransition tr{s, a, o.next};
                        q += o.probability * (local_reward(tr) + node(t + 1, o.next).local_value);
                        const int k = tindex.at(tr);
                        for (std::size_t fi = 0; fi < involving_.size(); ++fi)
                            if (interacts[fi][k] || node(t + 1, o.next).live[fi])
                                nd.live[fi] = 1;
                    }
                    if (q > best) {
                        best = q;
                        nd.local_action = a;
                    }
                }
                nd.local_value = nd.local_action >= 0 ? best : 0.0;
                nd.cri = std::none_of(nd.live.begin(), nd.live.end(), [](char c) { return c != 0; });
                if (nd.cri && options_.local_cri_pruning && nd.local_action >= 0)
                    nd.kept = {nd.local_action};
                else
                    nd.kept = model.available_actions(s);
            }
    }

    void compute_layers() {
        const auto& model = m_->agents[owner_];
        const StateId s0 = m_->initial.at(owner_);
        node(0, s0).reachable = true;
        for (int t = 0; t < horizon_; ++t)
            for (StateId s = 0; s < model.num_states(); ++s) {
                if (!node(t, s).reachable)
                    continue;
                for (ActionId a : node(t, s).kept)
                    for (const auto& o : model.outcomes(s, a))
                        node(t + 1, o.next).reachable = true;
            }
    }

    // Backward pass: U(t, s) is the best leaf reward plus U(t+1, s') over the
    // kept actions, L the worst; both are zero at the last layer.
    void compute_bounds() {
        const int S = num_states();
        const auto& model = m_->agents[owner_];
        for (int t = horizon_ - 1; t >= 0; --t)
            for (StateId s = 0; s < S; ++s) {
                auto& nd = node(t, s);
                if (nd.kept.empty())
                    continue;
                double hi = -std::numeric_limits<double>::infinity();
                double lo = options_.bounds == BoundRule::path ? std::numeric_limits<double>::infinity()
                                                               : -std::numeric_limits<double>::infinity();
                for (ActionId a : nd.kept) {
                    std::map<StateId, std::pair<double, double>> per_next;
                    std::vector<int> stack{tree_root(s, a)};
                    while (!stack.empty()) {
                        const auto& tn = nodes_[stack.back()];
                        stack.pop_back();
                        for (const auto& arc : tn.arcs)
                            stack.push_back(arc.child);
                        for (const auto& leaf : tn.leaf_arcs) {
                            const double up = leaf.reward + node(t + 1, leaf.next).upper;
                            const double down = leaf.reward + node(t + 1, leaf.next).lower;
                            auto [it, fresh] = per_next.emplace(leaf.next, std::pair{up, down});
                            if (!fresh) {
                                it->second.first = std::max(it->second.first, up);
                                it->second.second = std::min(it->second.second, down);
                            }
                        }
                    }
                    if (options_.bounds == BoundRule::path) {
                        for (const auto& [next, ud] : per_next) {
                            hi = std::max(hi, ud.first);
                            lo = std::min(lo, ud.second);
                        }
                        continue;
                    }
                    double up = 0.0, down = 0.0;
                    for (const auto& [next, ud] : per_next) {
                        const double p = model.probability(s, a, next);
                        up += p * ud.first;
                        down += p * ud.second;
                    }
                    hi = std::max(hi, up);
                    lo = std::max(lo, down);
                }
                nd.upper = hi;
                nd.lower = lo;
            }
    }

    const Instance* m_;
    AgentId owner_;
    int horizon_;
    BuildOptions options_;
    std::vector<int> assigned_;
    std::vector<int> involving_;
    std::vector<AgentId> tree_agents_;
    std::vector<detail::OwnerAnalysis::KeyScheme> keys_;
    int rho_ = 0;
    std::vector<int> roots_;
    std::vector<CrgNode> nodes_;
    std::vector<CrgTerm> terms_;
    std::vector<NodeInfo> info_;
};

inline ConditionalReturnGraph build_crg(const Instance& m, const RewardPartition& partition, AgentId i,
                                        BuildOptions options = {}) {
    return ConditionalReturnGraph(m, partition, i, options);
}

// Reward of the owner's transition under R_i. `context` is indexed by
// AgentId; absent agents must not be needed by any nonzero term.
inline double lookup_transition_reward(const ConditionalReturnGraph& g, const LocalTransition& tr,
                                       const std::vector<std::optional<LocalTransition>>& context) {
    const auto& agents = g.tree_agents();
    std::vector<LocalTransition> ctx(agents.size());
    std::uint64_t present = 0;
    for (std::size_t p = 0; p < agents.size(); ++p)
        if (agents[p] < static_cast<int>(context.size()) && context[agents[p]]) {
            ctx[p] = *context[agents[p]];
            present |= 1ULL << p;
        }
    const auto& leaf = g.resolve(tr.from, tr.action, tr.to, ctx.data(), present);
    return g.reward(leaf, present);
}

// Convenience: the owner's reward on a full joint transition.
inline double crg_transition_reward(const ConditionalReturnGraph& g, const JointState& s, const JointAction& a,
                                    const JointState& next) {
    const auto& agents = g.tree_agents();
    std::vector<LocalTransition> ctx(agents.size());
    for (std::size_t p = 0; p < agents.size(); ++p)
        ctx[p] = {s[agents[p]], a[agents[p]], next[agents[p]]};
    const std::uint64_t present = agents.empty() ? 0 : (agents.size() >= 64 ? ~0ULL : (1ULL << agents.size()) - 1);
    const AgentId i = g.owner();
    return g.reward(g.resolve(s[i], a[i], next[i], ctx.data(), present), present);
}

inline bool local_cri(const ConditionalReturnGraph& g, StateId s, int t) { return g.locally_cri(t, s); }

inline bool interaction_reachable(const ConditionalReturnGraph& g, StateId s, int t, int reward) {
    return g.interaction_reachable(t, s, reward);
}

inline SizeAudit size_audit(const ConditionalReturnGraph& g) { return g.size_audit(); }

// All graphs of one instance plus the interaction rewards the search needs.
struct CrgSet {
    const Instance* instance = nullptr;
    RewardPartition partition;
    std::vector<ConditionalReturnGraph> graphs;
    std::vector<int> interaction_rewards;

    const ConditionalReturnGraph& operator[](AgentId i) const { return graphs.at(i); }
};

inline CrgSet build_crgs(const Instance& m, const RewardPartition& partition, BuildOptions options = {}) {
    CrgSet set;
    set.instance = &m;
    set.partition = partition;
    for (AgentId i = 0; i < m.num_agents(); ++i)
        set.graphs.emplace_back(m, partition, i, options);
    for (std::size_t r = 0; r < m.rewards.size(); ++r)
        if (m.rewards[r].scope.size() > 1)
            set.interaction_rewards.push_back(static_cast<int>(r));
    return set;
}

} // namespace timmdp
