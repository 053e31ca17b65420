#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace timmdp;

namespace {

std::vector<Instance> random_instances(int count, std::uint64_t base = 0) {
    std::vector<Instance> out;
    for (int k = 0; k < count; ++k)
        out.push_back(gen_random_instance({.seed = derive_stream_seed(base, k)}));
    return out;
}

std::vector<Instance> small_mpps(int count) {
    std::vector<Instance> out;
    for (int k = 0; k < count; ++k) {
        MppParams p;
        p.agents = 2 + k % 2;
        p.tasks = 2;
        p.horizon = 3;
        p.density = 0.6;
        p.seed = derive_stream_seed(77, k);
        out.push_back(compile_mpp(gen_random_mpp(p)));
    }
    return out;
}

// Follows the first matching arc of `kind` from tree node `id`.
int child_by(const ConditionalReturnGraph& g, int id, CrgArc::Kind kind, ActionId action = -1) {
    for (const auto& arc : g.tree_node(id).arcs)
        if (arc.kind == kind && (action < 0 || arc.action == action))
            return arc.child;
    return -1;
}

} // namespace

TEST(Partition, BalancedGivesLocalsToTheirAgent) {
    const auto m = example_two_agent();
    const auto p = partition_balanced(m);
    EXPECT_EQ(p.of(0), (std::vector<int>{0, 2}));
    EXPECT_EQ(p.of(1), (std::vector<int>{1}));
    EXPECT_EQ(*p.owner_of(2), 0);
}

TEST(Partition, DefaultHonoursOwnerFields) {
    const auto m = example_two_agent();
    const auto p = default_partition(m);
    EXPECT_EQ(p.of(1), (std::vector<int>{1, 2}));
    EXPECT_EQ(partition_rewards(m, PartitionStrategy::fixed).assignment, p.assignment);
}

TEST(Partition, FixedRejectsBadAssignments) {
    const auto m = example_two_agent();
    EXPECT_THROW(partition_fixed(m, {0, 1}), PartitionError);
    EXPECT_THROW(partition_fixed(m, {1, 1, 0}), PartitionError);
    EXPECT_THROW(partition_fixed(m, {0, 1, 7}), PartitionError);
    RewardPartition twice{{{0, 2}, {1, 2}}};
    EXPECT_THROW(check_partition(m, twice), PartitionError);
    RewardPartition missing{{{0}, {1}}};
    EXPECT_THROW(check_partition(m, missing), PartitionError);
    auto no_owner = m;
    no_owner.rewards[2].owner.reset();
    EXPECT_THROW(partition_rewards(no_owner, PartitionStrategy::fixed), PartitionError);
}

TEST(Partition, BalancedSpreadsInteractionRewards) {
    for (const auto& m : random_instances(30, 3)) {
        const auto p = partition_balanced(m);
        EXPECT_NO_THROW(check_partition(m, p));
    }
}

TEST(DependentActions, MatchEnumeration) {
    int checked = 0;
    for (const auto& m : random_instances(40, 11)) {
        const auto p = partition_balanced(m);
        for (AgentId i = 0; i < m.num_agents(); ++i)
            for (const auto& tr : m.agents[i].transitions())
                for (AgentId j = 0; j < m.num_agents(); ++j) {
                    if (j == i)
                        continue;
                    const auto expected = oracle::dependent_actions(m, p.of(i), i, tr, j);
                    ASSERT_EQ(dependent_actions(m, p.of(i), i, tr, j), expected);
                    ++checked;
                }
    }
    EXPECT_GT(checked, 100);
}

TEST(Influence, MatchesEnumerationPerActionAndWildcard) {
    for (const auto& m : random_instances(40, 12)) {
        const auto p = partition_balanced(m);
        for (AgentId i = 0; i < m.num_agents(); ++i)
            for (const auto& tr : m.agents[i].transitions())
                for (AgentId j = 0; j < m.num_agents(); ++j) {
                    if (j == i)
                        continue;
                    for (ActionId a = 0; a < m.agents[j].num_actions(); ++a)
                        ASSERT_EQ(influence_set(m, p.of(i), i, tr, j, a),
                                  oracle::influence(m, p.of(i), i, tr, j, {a}));
                    const auto dep = dependent_actions(m, p.of(i), i, tr, j);
                    std::set<ActionId> rest;
                    for (ActionId a = 0; a < m.agents[j].num_actions(); ++a)
                        if (!dep.count(a))
                            rest.insert(a);
                    ASSERT_EQ(influence_set(m, p.of(i), i, tr, j, std::nullopt),
                              oracle::influence(m, p.of(i), i, tr, j, rest));
                }
    }
}

TEST(Influence, StateOnlyRewardMarksNoAction) {
    // The interaction depends on agent 1 reaching state 1, whatever it does.
    Instance m;
    m.horizon = 1;
    for (int k = 0; k < 2; ++k) {
        LocalModel model;
        model.add_state("s0");
        model.add_state("s1");
        model.add_action("x");
        model.add_action("y");
        model.add_outcome(0, 0, 1, 1.0);
        model.add_outcome(0, 1, 1, 0.5);
        model.add_outcome(0, 1, 0, 0.5);
        m.agents.push_back(model);
    }
    m.initial = {0, 0};
    RewardFunction f{"reach", {0, 1}, {std::nullopt, std::nullopt}, 0.0, {}, std::nullopt};
    for (ActionId a = 0; a < 2; ++a)
        for (ActionId b = 0; b < 2; ++b)
            f.entries[{0, a, 1, 0, b, 1}] = 5.0;
    m.rewards = {f};
    const std::vector<int> rewards{0};
    const LocalTransition tr{0, 0, 1};
    EXPECT_TRUE(dependent_actions(m, rewards, 0, tr, 1).empty());
    const auto infl = influence_set(m, rewards, 0, tr, 1, std::nullopt);
    EXPECT_EQ(infl, (std::set<KeyPair>{{{0}, {1}}}));
}

TEST(Crg, LeafRewardsSumToTheJointReward) {
    auto instances = random_instances(50, 21);
    for (auto& m : small_mpps(5))
        instances.push_back(std::move(m));
    for (const auto& m : instances) {
        const auto crgs = build_crgs(m, default_partition(m));
        oracle::for_each_joint_transition(m, [&](const JointState& s, const JointAction& a, const JointState& next) {
            double sum = 0.0;
            for (AgentId i = 0; i < m.num_agents(); ++i)
                sum += crg_transition_reward(crgs[i], s, a, next);
            ASSERT_EQ(sum, total_reward(m, s, a, next));
        });
    }
}

TEST(Crg, NonDependentActionsShareTheirLeaf) {
    for (const auto& m : random_instances(50, 22)) {
        const auto part = default_partition(m);
        const auto crgs = build_crgs(m, part);
        oracle::for_each_joint_transition(m, [&](const JointState& s, const JointAction& a, const JointState& next) {
            for (AgentId i = 0; i < m.num_agents(); ++i) {
                const LocalTransition tr{s[i], a[i], next[i]};
                std::vector<std::optional<LocalTransition>> ctx(m.num_agents());
                for (AgentId j = 0; j < m.num_agents(); ++j)
                    if (j != i)
                        ctx[j] = LocalTransition{s[j], a[j], next[j]};
                const double base = lookup_transition_reward(crgs[i], tr, ctx);
                for (AgentId j : crgs[i].tree_agents()) {
                    const auto dep = dependent_actions(m, part.of(i), i, tr, j);
                    if (dep.count(a[j]))
                        continue;
                    for (ActionId b = 0; b < m.agents[j].num_actions(); ++b) {
                        if (b == a[j] || dep.count(b) || m.agents[j].probability(s[j], b, next[j]) <= 0.0)
                            continue;
                        auto alt = ctx;
                        alt[j]->action = b;
                        ASSERT_EQ(lookup_transition_reward(crgs[i], tr, alt), base);
                        double direct = 0.0;
                        for (int r : part.of(i)) {
                            const auto& f = m.rewards[r];
                            std::vector<LocalTransition> trs;
                            for (AgentId k : f.scope)
                                trs.push_back(k == i ? tr : *alt[k]);
                            direct += reward_value(m, f, trs);
                        }
                        ASSERT_DOUBLE_EQ(direct, base);
                    }
                }
            }
        });
    }
}

TEST(Crg, LivenessMatchesEnumeration) {
    auto instances = random_instances(30, 23);
    for (auto& m : small_mpps(4))
        instances.push_back(std::move(m));
    for (const auto& m : instances) {
        const auto crgs = build_crgs(m, default_partition(m));
        for (AgentId i = 0; i < m.num_agents(); ++i) {
            const auto& g = crgs[i];
            for (int t = 0; t <= m.horizon; ++t)
                for (StateId s = 0; s < m.agents[i].num_states(); ++s) {
                    bool any = false;
                    for (int r : g.involving()) {
                        const bool live = interaction_reachable(g, s, t, r);
                        ASSERT_EQ(live, oracle::interaction_possible(m, i, t, s, r)) << "agent " << i << " t " << t;
                        any |= live;
                    }
                    if (g.reachable(t, s)) {
                        ASSERT_EQ(local_cri(g, s, t), !any);
                    }
                }
        }
    }
}

TEST(Crg, InteractionReachabilityRejectsForeignRewards) {
    const auto m = example_two_agent();
    const auto crgs = build_crgs(m, default_partition(m));
    EXPECT_THROW(crgs[0].interaction_reachable(0, 0, 0), ContractError);
    EXPECT_TRUE(crgs[0].interaction_reachable(0, 0, 2));
}

TEST(Crg, CriNodesKeepOnlyTheLocalOptimum) {
    for (const auto& m : small_mpps(6)) {
        const auto part = default_partition(m);
        const auto pruned = build_crgs(m, part);
        const auto full = build_crgs(m, part, {.local_cri_pruning = false});
        for (AgentId i = 0; i < m.num_agents(); ++i)
            for (int t = 0; t < m.horizon; ++t)
                for (StateId s : full[i].layer(t)) {
                    ASSERT_EQ(full[i].kept_actions(t, s), m.agents[i].available_actions(s));
                    if (pruned[i].reachable(t, s) && pruned[i].locally_cri(t, s)) {
                        ASSERT_EQ(pruned[i].kept_actions(t, s), std::vector<ActionId>{pruned[i].local_action(t, s)});
                    }
                }
    }
}

TEST(Crg, LayersFollowKeptActions) {
    for (const auto& m : random_instances(20, 24)) {
        const auto crgs = build_crgs(m, default_partition(m));
        for (AgentId i = 0; i < m.num_agents(); ++i) {
            const auto& g = crgs[i];
            EXPECT_EQ(g.layer(0), std::vector<StateId>{m.initial[i]});
            for (int t = 0; t < m.horizon; ++t) {
                std::set<StateId> next;
                for (StateId s : g.layer(t))
                    for (ActionId a : g.kept_actions(t, s))
                        for (const auto& o : m.agents[i].outcomes(s, a))
                            next.insert(o.next);
                EXPECT_EQ(g.layer(t + 1), std::vector<StateId>(next.begin(), next.end()));
            }
        }
    }
}

TEST(Crg, BoundsBracketTheLocalValue) {
    for (const auto& m : random_instances(20, 25)) {
        for (auto rule : {BoundRule::path, BoundRule::expected}) {
            const auto crgs = build_crgs(m, default_partition(m), {.bounds = rule});
            for (AgentId i = 0; i < m.num_agents(); ++i)
                for (int t = 0; t <= m.horizon; ++t)
                    for (StateId s : crgs[i].layer(t)) {
                        EXPECT_LE(crgs[i].lower(t, s), crgs[i].upper(t, s) + 1e-12);
                        if (t == m.horizon) {
                            EXPECT_EQ(crgs[i].lower(t, s), 0.0);
                            EXPECT_EQ(crgs[i].upper(t, s), 0.0);
                        }
                    }
        }
    }
}

TEST(Crg, SizeStaysWithinTheBound) {
    auto instances = random_instances(40, 26);
    for (auto& m : small_mpps(10))
        instances.push_back(std::move(m));
    for (const auto& m : instances) {
        const auto crgs = build_crgs(m, default_partition(m));
        for (AgentId i = 0; i < m.num_agents(); ++i) {
            const auto audit = size_audit(crgs[i]);
            EXPECT_TRUE(audit.within_bound()) << audit.measured << " > " << audit.size_bound;
            EXPECT_EQ(audit.tree_depth, static_cast<int>(crgs[i].tree_agents().size()));
        }
    }
}

TEST(Crg, ExampleStructure) {
    const auto m = example_two_agent();
    const auto crgs = build_crgs(m, default_partition(m));
    const auto a0 = size_audit(crgs[0]);
    const auto a1 = size_audit(crgs[1]);
    EXPECT_EQ(a0.state_nodes[1], 3u);
    EXPECT_EQ(a0.leaf_arcs[0], 3u);
    EXPECT_EQ(a1.state_nodes[1], 4u);
    EXPECT_EQ(a1.leaf_arcs[0], 6u);

    // Agent 2's a-transition branches on a¹ and *¹; under *¹ only ⊥¹ remains.
    const auto& g = crgs[1];
    const int root = g.tree_root(0, 0);
    ASSERT_GE(root, 0);
    const int on_a = child_by(g, root, CrgArc::Kind::action, 0);
    const int wild = child_by(g, root, CrgArc::Kind::any_action);
    ASSERT_GE(on_a, 0);
    ASSERT_GE(wild, 0);
    EXPECT_EQ(g.tree_node(on_a).kind, CrgNode::Kind::influence_root);
    EXPECT_EQ(g.tree_node(on_a).arcs.size(), 2u);
    ASSERT_EQ(g.tree_node(wild).arcs.size(), 1u);
    EXPECT_EQ(g.tree_node(wild).arcs[0].kind, CrgArc::Kind::no_influence);
    // b² and c² do not interact: plain reward arcs.
    EXPECT_TRUE(g.tree_node(g.tree_root(0, 1)).arcs.empty());
    EXPECT_EQ(g.tree_node(g.tree_root(0, 2)).leaf_arcs.size(), 2u);

    // Agent 1 owns no interaction reward: its trees have no levels.
    EXPECT_TRUE(crgs[0].tree_agents().empty());
    EXPECT_TRUE(crgs[0].tree_node(crgs[0].tree_root(0, 0)).arcs.empty());
}

TEST(Crg, ExampleLeafRewards) {
    const auto m = example_two_agent();
    const auto crgs = build_crgs(m, default_partition(m));
    // a² together with a¹ from the start: f1 becomes true, reward 2 - 4.
    EXPECT_EQ(crg_transition_reward(crgs[1], {0, 0}, {0, 0}, {1, 1}), -2.0);
    // a² with b¹: no interaction.
    EXPECT_EQ(crg_transition_reward(crgs[1], {0, 0}, {1, 0}, {2, 1}), 2.0);
    // a² with a¹ after b¹: f1 becomes false, reward 2 + 1.5.
    const StateId s_b = 2, s_ba = 6;
    ASSERT_EQ(m.agents[0].states[s_ba].label, "s_ba");
    const StateId t_b = 2, t_ba = 8;
    ASSERT_EQ(m.agents[1].states[t_ba].label, "s_ba");
    EXPECT_EQ(crg_transition_reward(crgs[1], {s_b, t_b}, {0, 0}, {s_ba, t_ba}), 3.5);
}

TEST(Crg, UnknownAgentIsAContractError) {
    const auto m = example_two_agent();
    EXPECT_THROW(build_crg(m, default_partition(m), 2), ContractError);
}
