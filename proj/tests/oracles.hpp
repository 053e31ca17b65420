#pragma once

// Independent reference implementations used by the tests. They work on
// the raw instance (reward tables looked up key by key) and enumerate
// everything, so they share no code paths with the library's CRG or search
// machinery beyond the model types.

#include <timmdp/timmdp.hpp>

#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

using namespace timmdp;

// Union of the views of `j` over the given rewards; nullopt as soon as one
// of them reads the full state.
inline std::optional<std::vector<FeatureId>> union_view(const Instance& m, const std::vector<int>& rewards, AgentId j) {
    std::set<FeatureId> feats;
    for (int r : rewards) {
        const auto& f = m.rewards[r];
        const int k = f.position(j);
        if (k < 0)
            continue;
        if (!f.view(k))
            return std::nullopt;
        feats.insert(f.view(k)->begin(), f.view(k)->end());
    }
    return std::vector<FeatureId>(feats.begin(), feats.end());
}

// Calls fn for every combination of positive-probability transitions of the
// members of f other than those fixed in `fixed` (indexed by scope position).
inline void for_each_member_combo(const Instance& m, const RewardFunction& f,
                                  std::vector<std::optional<LocalTransition>> fixed,
                                  const std::function<void(const std::vector<LocalTransition>&)>& fn) {
    std::vector<LocalTransition> cur(f.scope.size());
    std::function<void(std::size_t)> rec = [&](std::size_t k) {
        if (k == f.scope.size()) {
            fn(cur);
            return;
        }
        if (fixed[k]) {
            cur[k] = *fixed[k];
            rec(k + 1);
            return;
        }
        for (const auto& tr : m.agents[f.scope[k]].transitions()) {
            cur[k] = tr;
            rec(k + 1);
        }
    };
    rec(0);
}

// Dependent actions by enumeration: a^j counts when some possible joint
// transition containing tr and a^j earns a nonzero reward from a function
// in `rewards`, and some other action of j in the same place would earn a
// different one.
inline std::set<ActionId> dependent_actions(const Instance& m, const std::vector<int>& rewards, AgentId owner,
                                            const LocalTransition& tr, AgentId j) {
    std::set<ActionId> out;
    for (int r : rewards) {
        const auto& f = m.rewards[r];
        const int ko = f.position(owner), kj = f.position(j);
        if (ko < 0 || kj < 0)
            continue;
        std::vector<std::optional<LocalTransition>> fixed(f.scope.size());
        fixed[ko] = tr;
        for_each_member_combo(m, f, fixed, [&](const std::vector<LocalTransition>& trs) {
            const double v = reward_value(m, f, trs);
            if (v == 0.0)
                return;
            auto alt = trs;
            for (ActionId b = 0; b < m.agents[j].num_actions(); ++b) {
                if (b == trs[kj].action)
                    continue;
                alt[kj].action = b;
                if (reward_value(m, f, alt) != v) {
                    out.insert(trs[kj].action);
                    return;
                }
            }
        });
    }
    return out;
}

// Influence pairs of j (as view-key pairs under the union view) for j's
// actions in `actions`: a pair of j's possible transition counts when the
// joint transition earns a nonzero reward and some other state pair of j
// would change it.
inline std::set<std::pair<std::vector<int>, std::vector<int>>>
influence(const Instance& m, const std::vector<int>& rewards, AgentId owner, const LocalTransition& tr, AgentId j,
          const std::set<ActionId>& actions) {
    const auto view = union_view(m, rewards, j);
    const auto& model = m.agents[j];
    std::set<std::pair<std::vector<int>, std::vector<int>>> out;
    for (int r : rewards) {
        const auto& f = m.rewards[r];
        const int ko = f.position(owner), kj = f.position(j);
        if (ko < 0 || kj < 0)
            continue;
        std::vector<std::optional<LocalTransition>> fixed(f.scope.size());
        fixed[ko] = tr;
        for_each_member_combo(m, f, fixed, [&](const std::vector<LocalTransition>& trs) {
            if (!actions.count(trs[kj].action))
                return;
            const double v = reward_value(m, f, trs);
            if (v == 0.0)
                return;
            auto alt = trs;
            for (StateId s2 = 0; s2 < model.num_states(); ++s2)
                for (StateId n2 = 0; n2 < model.num_states(); ++n2) {
                    if (s2 == trs[kj].from && n2 == trs[kj].to)
                        continue;
                    alt[kj].from = s2;
                    alt[kj].to = n2;
                    if (reward_value(m, f, alt) != v) {
                        out.insert({view_key(model, view, trs[kj].from), view_key(model, view, trs[kj].to)});
                        return;
                    }
                }
        });
    }
    return out;
}

// Every positive-probability joint transition (s, a, s') over all local
// states, reachable or not.
inline void for_each_joint_transition(
    const Instance& m, const std::function<void(const JointState&, const JointAction&, const JointState&)>& fn) {
    const int n = m.num_agents();
    std::vector<std::vector<LocalTransition>> local(n);
    for (AgentId i = 0; i < n; ++i)
        local[i] = m.agents[i].transitions();
    JointState s(n), next(n);
    JointAction a(n);
    std::function<void(int)> rec = [&](int i) {
        if (i == n) {
            fn(s, a, next);
            return;
        }
        for (const auto& tr : local[i]) {
            s[i] = tr.from;
            a[i] = tr.action;
            next[i] = tr.to;
            rec(i + 1);
        }
    };
    rec(0);
}

// Optimal value by plain recursion over joint states with a memo table.
inline double optimal_value(const Instance& m) {
    std::vector<std::map<JointState, double>> memo(m.horizon + 1);
    std::function<double(int, const JointState&)> v = [&](int t, const JointState& s) -> double {
        if (t == m.horizon)
            return 0.0;
        if (auto it = memo[t].find(s); it != memo[t].end())
            return it->second;
        const int n = m.num_agents();
        double best = -1e300;
        JointAction a(n);
        std::function<void(int)> acts = [&](int i) {
            if (i == n) {
                double q = 0.0;
                std::function<void(int, double, JointState&)> outs = [&](int k, double p, JointState& nx) {
                    if (k == n) {
                        double r = 0.0;
                        for (const auto& f : m.rewards) {
                            std::vector<LocalTransition> trs;
                            for (AgentId j : f.scope)
                                trs.push_back({s[j], a[j], nx[j]});
                            r += reward_value(m, f, trs);
                        }
                        q += p * (r + v(t + 1, nx));
                        return;
                    }
                    for (const auto& o : m.agents[k].outcomes(s[k], a[k])) {
                        nx[k] = o.next;
                        outs(k + 1, p * o.probability, nx);
                    }
                };
                JointState nx(n);
                outs(0, 1.0, nx);
                best = std::max(best, q);
                return;
            }
            for (ActionId x = 0; x < m.agents[i].num_actions(); ++x)
                if (!m.agents[i].outcomes(s[i], x).empty()) {
                    a[i] = x;
                    acts(i + 1);
                }
        };
        acts(0);
        memo[t][s] = best;
        return best;
    };
    return v(0, m.initial);
}

// Whether reward r can still be nonzero on some future transition of agent
// i from stage t in state s, with the other members doing anything
// possible.
inline bool interaction_possible(const Instance& m, AgentId i, int t, StateId s, int r) {
    const auto& f = m.rewards[r];
    const int ki = f.position(i);
    std::set<std::pair<int, StateId>> seen;
    std::function<bool(int, StateId)> rec = [&](int u, StateId x) -> bool {
        if (u >= m.horizon || !seen.insert({u, x}).second)
            return false;
        for (ActionId a = 0; a < m.agents[i].num_actions(); ++a)
            for (const auto& o : m.agents[i].outcomes(x, a)) {
                std::vector<std::optional<LocalTransition>> fixed(f.scope.size());
                fixed[ki] = LocalTransition{x, a, o.next};
                bool nonzero = false;
                for_each_member_combo(m, f, fixed, [&](const std::vector<LocalTransition>& trs) {
                    if (reward_value(m, f, trs) != 0.0)
                        nonzero = true;
                });
                if (nonzero || rec(u + 1, o.next))
                    return true;
            }
        return false;
    };
    return rec(t, s);
}

// Random execution sequence of length t (actions uniform over the
// available ones, outcomes by their probabilities).
inline ExecutionSequence random_sequence(const Instance& m, std::mt19937_64& rng, int t) {
    ExecutionSequence phi;
    phi.states.push_back(m.initial);
    for (int u = 0; u < t; ++u) {
        const auto& s = phi.states.back();
        const auto actions = available_joint_actions(m, s);
        const auto& a = actions[std::uniform_int_distribution<std::size_t>(0, actions.size() - 1)(rng)];
        const auto outs = enumerate_successors(m, s, a);
        std::vector<double> w;
        for (const auto& o : outs)
            w.push_back(o.probability);
        const auto pick = std::discrete_distribution<std::size_t>(w.begin(), w.end())(rng);
        phi.actions.push_back(a);
        phi.states.push_back(outs[pick].state);
    }
    return phi;
}

// Minimal DOT reader: accepts the graph/digraph grammar (statements, attribute
// lists, subgraphs, edge chains) with identifiers, numerals and quoted
// strings, and records nodes and edges.
struct DotGraph {
    bool directed = false;
    std::map<std::string, std::map<std::string, std::string>> nodes;
    struct Edge {
        std::string from, to;
        std::map<std::string, std::string> attrs;
    };
    std::vector<Edge> edges;
};

class DotParser {
public:
    explicit DotParser(std::string text) : text_(std::move(text)) {}

    // Returns an error message, or nullopt if the text is valid.
    std::optional<std::string> parse(DotGraph& g) {
        try {
            tokenize();
            graph(g);
            return std::nullopt;
        } catch (const std::runtime_error& e) {
            return std::string(e.what());
        }
    }

private:
    struct Token {
        enum Kind { id, punct, end } kind;
        std::string text;
        bool quoted = false;
    };

    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error("token " + std::to_string(pos_) + ": " + what);
    }

    void tokenize() {
        std::size_t k = 0;
        while (k < text_.size()) {
            const char c = text_[k];
            if (std::isspace(static_cast<unsigned char>(c))) {
                ++k;
            } else if (c == '/' && k + 1 < text_.size() && text_[k + 1] == '/') {
                while (k < text_.size() && text_[k] != '\n')
                    ++k;
            } else if (c == '"') {
                std::string s;
                ++k;
                while (true) {
                    if (k >= text_.size())
                        throw std::runtime_error("unterminated string");
                    if (text_[k] == '\\' && k + 1 < text_.size()) {
                        s += text_[k];
                        s += text_[k + 1];
                        k += 2;
                        continue;
                    }
                    if (text_[k] == '"')
                        break;
                    s += text_[k++];
                }
                ++k;
                tokens_.push_back({Token::id, s, true});
            } else if (c == '-' && k + 1 < text_.size() && (text_[k + 1] == '>' || text_[k + 1] == '-')) {
                tokens_.push_back({Token::punct, text_.substr(k, 2)});
                k += 2;
            } else if (std::string("{}[]=;,:").find(c) != std::string::npos) {
                tokens_.push_back({Token::punct, std::string(1, c)});
                ++k;
            } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || (c & 0x80)) {
                std::size_t e = k;
                while (e < text_.size() &&
                       (std::isalnum(static_cast<unsigned char>(text_[e])) || text_[e] == '_' || (text_[e] & 0x80)))
                    ++e;
                tokens_.push_back({Token::id, text_.substr(k, e - k)});
                k = e;
            } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.') {
                std::size_t e = k + 1;
                while (e < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[e])) || text_[e] == '.'))
                    ++e;
                tokens_.push_back({Token::id, text_.substr(k, e - k)});
                k = e;
            } else {
                throw std::runtime_error(std::string("unexpected character '") + c + "'");
            }
        }
        tokens_.push_back({Token::end, ""});
    }

    const Token& peek(std::size_t ahead = 0) const { return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)]; }
    bool is(const char* p, std::size_t ahead = 0) const {
        return peek(ahead).kind == Token::punct && peek(ahead).text == p;
    }
    bool keyword(const char* w) const {
        if (peek().kind != Token::id || peek().quoted)
            return false;
        std::string lower;
        for (char c : peek().text)
            lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return lower == w;
    }
    void expect(const char* p) {
        if (!is(p))
            fail(std::string("expected '") + p + "', got '" + peek().text + "'");
        ++pos_;
    }
    std::string identifier() {
        if (peek().kind != Token::id)
            fail("expected an identifier, got '" + peek().text + "'");
        return tokens_[pos_++].text;
    }

    void graph(DotGraph& g) {
        if (keyword("strict"))
            ++pos_;
        if (keyword("digraph"))
            g.directed = true;
        else if (!keyword("graph"))
            fail("expected graph or digraph");
        ++pos_;
        if (peek().kind == Token::id)
            ++pos_;
        expect("{");
        statements(g);
        expect("}");
        if (peek().kind != Token::end)
            fail("trailing content");
    }

    void statements(DotGraph& g) {
        while (!is("}")) {
            if (peek().kind == Token::end)
                fail("unexpected end of input");
            statement(g);
            if (is(";"))
                ++pos_;
        }
    }

    std::map<std::string, std::string> attributes() {
        std::map<std::string, std::string> out;
        while (is("[")) {
            ++pos_;
            while (!is("]")) {
                const auto key = identifier();
                expect("=");
                out[key] = identifier();
                if (is(",") || is(";"))
                    ++pos_;
            }
            expect("]");
        }
        return out;
    }

    // Node id or subgraph; returns the node id ("" for a subgraph).
    std::string endpoint(DotGraph& g) {
        if (keyword("subgraph") || is("{")) {
            subgraph(g);
            return "";
        }
        auto id = identifier();
        if (is(":")) {
            ++pos_;
            identifier();
        }
        return id;
    }

    void subgraph(DotGraph& g) {
        if (keyword("subgraph")) {
            ++pos_;
            if (peek().kind == Token::id)
                ++pos_;
        }
        expect("{");
        statements(g);
        expect("}");
    }

    void statement(DotGraph& g) {
        if (keyword("graph") || keyword("node") || keyword("edge")) {
            ++pos_;
            attributes();
            return;
        }
        if (peek().kind == Token::id && is("=", 1)) {
            pos_ += 2;
            identifier();
            return;
        }
        auto first = endpoint(g);
        if (is("->") || is("--")) {
            std::vector<std::string> chain{first};
            while (is("->") || is("--")) {
                if ((peek().text == "->") != g.directed)
                    fail("edge operator does not match the graph kind");
                ++pos_;
                chain.push_back(endpoint(g));
            }
            const auto attrs = attributes();
            for (std::size_t k = 0; k + 1 < chain.size(); ++k)
                g.edges.push_back({chain[k], chain[k + 1], attrs});
            return;
        }
        if (first.empty())
            return;
        auto attrs = attributes();
        auto& node = g.nodes[first];
        for (auto& [k, v] : attrs)
            node[k] = v;
    }

    std::string text_;
    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

inline std::optional<std::string> dot_error(const std::string& text, DotGraph* out = nullptr) {
    DotGraph g;
    DotParser p(text);
    auto err = p.parse(g);
    if (out)
        *out = std::move(g);
    return err;
}

} // namespace oracle
