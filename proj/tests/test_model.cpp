#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace timmdp;

namespace {

// Agent with states 0 -> {1, 2} under action 0 and a self-loop action 1.
LocalModel coin(const std::string& name, double p) {
    LocalModel model;
    model.name = name;
    model.feature_names = {"f"};
    model.add_state("s0", {0});
    model.add_state("s1", {1});
    model.add_state("s2", {0});
    model.add_action("flip");
    model.add_action("stay");
    model.add_outcome(0, 0, 1, p);
    model.add_outcome(0, 0, 2, 1.0 - p);
    for (StateId s = 0; s < 3; ++s)
        model.add_outcome(s, 1, s, 1.0);
    return model;
}

Instance pair_instance() {
    Instance m;
    m.horizon = 2;
    m.agents = {coin("a", 0.25), coin("b", 0.5)};
    m.initial = {0, 0};
    RewardFunction local{"local", {0}, {std::nullopt}, 0.0, {}, std::nullopt};
    local.entries[{0, 0, 1}] = 2.0;
    RewardFunction both{"both", {0, 1}, {std::vector<FeatureId>{0}, std::vector<FeatureId>{0}}, 0.0, {}, std::nullopt};
    both.entries[{0, 0, 1, 0, 0, 1}] = -3.0;
    m.rewards = {local, both};
    return m;
}

bool has_error_containing(const std::vector<Violation>& vs, const std::string& text) {
    for (const auto& v : vs)
        if (v.severity == Violation::Severity::error && (v.message.find(text) != std::string::npos))
            return true;
    return false;
}

} // namespace

TEST(Model, OutcomesAreSortedAndQueryable) {
    auto model = coin("a", 0.25);
    const auto& outs = model.outcomes(0, 0);
    ASSERT_EQ(outs.size(), 2u);
    EXPECT_LT(outs[0].next, outs[1].next);
    EXPECT_DOUBLE_EQ(model.probability(0, 0, 2), 0.75);
    EXPECT_DOUBLE_EQ(model.probability(1, 0, 2), 0.0);
    EXPECT_EQ(model.available_actions(1), std::vector<ActionId>{1});
    EXPECT_EQ(model.feature_index("f"), 0);
    EXPECT_EQ(model.feature_index("g"), -1);
    EXPECT_EQ(model.transitions().size(), 5u);
}

TEST(Model, ValidInstancePasses) {
    const auto m = pair_instance();
    EXPECT_FALSE(has_errors(validate_instance(m)));
}

TEST(Model, ProbabilitiesMustSumToOne) {
    auto m = pair_instance();
    auto outs = m.agents[0].outcomes(0, 0);
    outs[0].probability = 0.15;
    m.agents[0].set_outcomes(0, 0, outs);
    EXPECT_TRUE(has_error_containing(validate_instance(m), "sum"));
    renormalize(m.agents[0]);
    EXPECT_FALSE(has_errors(validate_instance(m)));
}

TEST(Model, ReachableStateWithoutActionIsAnError) {
    auto m = pair_instance();
    m.agents[1].set_outcomes(1, 1, {});
    EXPECT_TRUE(has_error_containing(validate_instance(m), "no available action"));
    m.horizon = 1;
    EXPECT_FALSE(has_errors(validate_instance(m)));
}

TEST(Model, UnreachableStateIsAWarning) {
    auto m = pair_instance();
    m.agents[0].add_state("island", {0});
    m.agents[0].add_outcome(3, 1, 3, 1.0);
    const auto vs = validate_instance(m);
    EXPECT_FALSE(has_errors(vs));
    bool warned = false;
    for (const auto& v : vs)
        warned |= v.severity == Violation::Severity::warning && v.message.find("unreachable") != std::string::npos;
    EXPECT_TRUE(warned);
}

TEST(Model, RewardScopeRules) {
    auto m = pair_instance();
    m.rewards[1].scope = {1, 0};
    EXPECT_TRUE(has_error_containing(validate_instance(m), "ascending"));
    m = pair_instance();
    m.rewards[1].scope = {0, 5};
    EXPECT_TRUE(has_errors(validate_instance(m)));
    m = pair_instance();
    m.rewards[1].entries[{0, 0}] = 1.0;
    EXPECT_TRUE(has_error_containing(validate_instance(m), "length"));
    m = pair_instance();
    m.rewards[1].owner = 3;
    EXPECT_TRUE(has_error_containing(validate_instance(m), "owner"));
    m = pair_instance();
    m.initial = {0};
    EXPECT_TRUE(has_errors(validate_instance(m)));
    m = pair_instance();
    m.horizon = 0;
    EXPECT_TRUE(has_errors(validate_instance(m)));
}

TEST(Model, JointProbabilityIsTheProduct) {
    const auto m = pair_instance();
    EXPECT_DOUBLE_EQ(joint_transition_probability(m, {0, 0}, {0, 0}, {1, 2}), 0.25 * 0.5);
    EXPECT_DOUBLE_EQ(joint_transition_probability(m, {0, 0}, {0, 1}, {2, 0}), 0.75);
    EXPECT_DOUBLE_EQ(joint_transition_probability(m, {0, 0}, {0, 1}, {2, 1}), 0.0);
    EXPECT_THROW(joint_transition_probability(m, {0}, {0, 0}, {1, 2}), ContractError);
}

TEST(Model, SuccessorsEnumerateTheProduct) {
    const auto m = pair_instance();
    const auto outs = enumerate_successors(m, {0, 0}, {0, 0});
    ASSERT_EQ(outs.size(), 4u);
    double sum = 0.0;
    for (const auto& o : outs) {
        sum += o.probability;
        EXPECT_DOUBLE_EQ(o.probability, joint_transition_probability(m, {0, 0}, {0, 0}, o.state));
    }
    EXPECT_DOUBLE_EQ(sum, 1.0);
    EXPECT_EQ(outs.front().state, (JointState{1, 1}));
    EXPECT_EQ(outs.back().state, (JointState{2, 2}));
    EXPECT_THROW(enumerate_successors(m, {1, 0}, {0, 0}), ContractError);
}

TEST(Model, JointActionsAreLexicographic) {
    const auto m = pair_instance();
    const auto acts = available_joint_actions(m, {0, 1});
    ASSERT_EQ(acts.size(), 2u);
    EXPECT_EQ(acts[0], (JointAction{0, 1}));
    EXPECT_EQ(acts[1], (JointAction{1, 1}));
    EXPECT_TRUE(std::is_sorted(acts.begin(), acts.end()));
}

TEST(Model, TotalRewardSumsEveryFunction) {
    const auto m = pair_instance();
    EXPECT_DOUBLE_EQ(total_reward(m, {0, 0}, {0, 0}, {1, 1}), 2.0 - 3.0);
    EXPECT_DOUBLE_EQ(total_reward(m, {0, 0}, {0, 0}, {1, 2}), 2.0);
    EXPECT_DOUBLE_EQ(total_reward(m, {0, 0}, {0, 1}, {1, 0}), 2.0);
    EXPECT_DOUBLE_EQ(total_reward(m, {0, 0}, {1, 1}, {0, 0}), 0.0);
}

TEST(Model, DefaultValueAppliesToMissingEntries) {
    auto m = pair_instance();
    m.rewards[0].default_value = 0.5;
    EXPECT_DOUBLE_EQ(total_reward(m, {0, 0}, {1, 1}, {0, 0}), 0.5);
    const RewardEvaluator ev(m);
    EXPECT_DOUBLE_EQ(ev.total({0, 0}, {1, 1}, {0, 0}), 0.5);
}

TEST(Model, SequenceReturnDecomposesPerFunction) {
    const auto m = pair_instance();
    ExecutionSequence phi{{{0, 0}, {1, 1}, {1, 1}}, {{0, 0}, {1, 1}}};
    const auto ret = sequence_return(m, phi);
    EXPECT_DOUBLE_EQ(ret.total, -1.0);
    ASSERT_EQ(ret.per_component.size(), 2u);
    EXPECT_DOUBLE_EQ(ret.per_component[0], 2.0);
    EXPECT_DOUBLE_EQ(ret.per_component[1], -3.0);

    ExecutionSequence bad{{{0, 0}, {1, 0}}, {{0, 0}}};
    EXPECT_THROW(sequence_return(m, bad), ContractError);
    ExecutionSequence wrong_start{{{1, 0}}, {}};
    EXPECT_THROW(sequence_return(m, wrong_start), ContractError);
}

TEST(Model, CompiledRewardMatchesTableLookup) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto m = gen_random_instance({.seed = seed});
        const RewardEvaluator ev(m);
        oracle::for_each_joint_transition(m, [&](const JointState& s, const JointAction& a, const JointState& next) {
            for (std::size_t r = 0; r < m.rewards.size(); ++r)
                ASSERT_EQ(ev.value(r, s, a, next), reward_value(m, m.rewards[r], project(m.rewards[r], s, a, next)));
        });
    }
}

TEST(Model, ReturnDecompositionIsExactOnRandomSequences) {
    std::mt19937_64 rng(5);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto m = gen_random_instance({.seed = seed});
        for (int k = 0; k < 20; ++k) {
            const auto phi = oracle::random_sequence(m, rng, m.horizon);
            const auto ret = sequence_return(m, phi);
            double sum = 0.0;
            for (double v : ret.per_component)
                sum += v;
            EXPECT_EQ(sum, ret.total);
        }
    }
}

TEST(Rng, IsDeterministicAndInRange) {
    SplitMix64 a(42), b(42);
    for (int k = 0; k < 100; ++k)
        ASSERT_EQ(a.next(), b.next());
    SplitMix64 r(7);
    std::vector<int> hits(5, 0);
    for (int k = 0; k < 5000; ++k) {
        const auto v = r.uniform_int(3, 7);
        ASSERT_GE(v, 3);
        ASSERT_LE(v, 7);
        ++hits[v - 3];
        const double u = r.uniform01();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    for (int h : hits)
        EXPECT_GT(h, 800);
    EXPECT_NE(derive_stream_seed(1, 0), derive_stream_seed(1, 1));
    EXPECT_EQ(derive_stream_seed(9, 4), derive_stream_seed(9, 4));
}
