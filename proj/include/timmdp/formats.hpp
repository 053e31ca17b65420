#pragma once

#include "crg.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "policy.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace timmdp {

inline constexpr const char* schema_version = "1";

using Json = nlohmann::json;

namespace detail {

inline void emit_string(std::string& out, const std::string& s) {
    // nlohmann escapes control characters and, with ensure_ascii, all
    // non-ASCII code points.
    out += Json(s).dump(-1, ' ', true);
}

inline std::string format_double(double v) {
    if (!std::isfinite(v))
        throw ContractError("cannot serialise a non-finite number");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline bool is_scalar(const Json& j) { return !j.is_object() && !j.is_array(); }

inline void emit(std::string& out, const Json& j, int indent) {
    const std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    const std::string inner(static_cast<std::size_t>(indent + 1) * 2, ' ');
    switch (j.type()) {
    case Json::value_t::null:
        out += "null";
        break;
    case Json::value_t::boolean:
        out += j.get<bool>() ? "true" : "false";
        break;
    case Json::value_t::number_integer:
        out += std::to_string(j.get<std::int64_t>());
        break;
    case Json::value_t::number_unsigned:
        out += std::to_string(j.get<std::uint64_t>());
        break;
    case Json::value_t::number_float:
        out += format_double(j.get<double>());
        break;
    case Json::value_t::string:
        emit_string(out, j.get_ref<const std::string&>());
        break;
    case Json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            break;
        }
        const bool flat = std::all_of(j.begin(), j.end(), [](const Json& x) {
            return is_scalar(x) || (x.is_array() && std::all_of(x.begin(), x.end(), is_scalar));
        });
        if (flat) {
            out += '[';
            bool first = true;
            for (const auto& x : j) {
                if (!first)
                    out += ", ";
                first = false;
                emit(out, x, indent + 1);
            }
            out += ']';
            break;
        }
        out += "[\n";
        bool first = true;
        for (const auto& x : j) {
            if (!first)
                out += ",\n";
            first = false;
            out += inner;
            emit(out, x, indent + 1);
        }
        out += '\n' + pad + ']';
        break;
    }
    case Json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            break;
        }
        out += "{\n";
        bool first = true;
        for (const auto& [key, value] : j.items()) { // std::map: keys already sorted
            if (!first)
                out += ",\n";
            first = false;
            out += inner;
            emit_string(out, key);
            out += ": ";
            emit(out, value, indent + 1);
        }
        out += '\n' + pad + '}';
        break;
    }
    default:
        throw ContractError("cannot serialise JSON value");
    }
}

} // namespace detail

// Canonical text: sorted keys, two-space indent, LF line endings, ASCII-only
// escapes, floating-point numbers with 17 significant digits.
inline std::string canonical_json(const Json& j) {
    std::string out;
    detail::emit(out, j, 0);
    out += '\n';
    return out;
}

inline Json instance_to_json(const Instance& m) {
    Json doc;
    doc["schema_version"] = schema_version;
    Json params = Json::object();
    for (const auto& [k, v] : m.metadata.params)
        params[k] = v;
    doc["metadata"] = {{"generator", m.metadata.generator},
                       {"params", params},
                       {"seed", m.metadata.seed},
                       {"rng", m.metadata.rng}};
    doc["horizon"] = m.horizon;
    doc["initial_state"] = m.initial;
    Json agents = Json::array();
    for (const auto& model : m.agents) {
        Json a;
        a["name"] = model.name;
        a["features"] = model.feature_names;
        Json states = Json::array();
        for (const auto& s : model.states)
            states.push_back({{"id", s.id}, {"label", s.label}, {"features", s.features}});
        a["states"] = states;
        Json actions = Json::array();
        for (const auto& x : model.actions)
            actions.push_back({{"id", x.id}, {"label", x.label}});
        a["actions"] = actions;
        Json transitions = Json::array();
        for (StateId s = 0; s < model.num_states(); ++s)
            for (ActionId x = 0; x < model.num_actions(); ++x) {
                const auto& outs = model.outcomes(s, x);
                if (outs.empty())
                    continue;
                Json list = Json::array();
                for (const auto& o : outs)
                    list.push_back({{"next", o.next}, {"probability", o.probability}});
                transitions.push_back({{"state", s}, {"action", x}, {"outcomes", list}});
            }
        a["transitions"] = transitions;
        agents.push_back(a);
    }
    doc["agents"] = agents;
    Json rewards = Json::array();
    for (const auto& f : m.rewards) {
        Json r;
        r["name"] = f.name;
        r["scope"] = f.scope;
        Json views = Json::array();
        std::vector<std::size_t> widths;
        for (std::size_t k = 0; k < f.scope.size(); ++k) {
            const auto& view = f.view(static_cast<int>(k));
            if (!view) {
                views.push_back(nullptr);
                widths.push_back(1);
                continue;
            }
            Json names = Json::array();
            const auto& model = m.agents.at(f.scope[k]);
            for (FeatureId x : *view)
                names.push_back(model.feature_names.at(x));
            views.push_back(names);
            widths.push_back(view->size());
        }
        r["views"] = views;
        r["default"] = f.default_value;
        if (f.owner)
            r["owner"] = *f.owner;
        Json entries = Json::array();
        for (const auto& [key, value] : f.entries) {
            Json from = Json::array(), acts = Json::array(), to = Json::array();
            std::size_t pos = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                const auto w = static_cast<std::ptrdiff_t>(widths[k]);
                if (pos + 2 * widths[k] + 1 > key.size())
                    throw ContractError("reward '" + f.name + "' has an entry key of the wrong length");
                from.push_back(std::vector<int>(key.begin() + pos, key.begin() + pos + w));
                acts.push_back(key[pos + widths[k]]);
                to.push_back(std::vector<int>(key.begin() + pos + w + 1, key.begin() + pos + 2 * w + 1));
                pos += 2 * widths[k] + 1;
            }
            entries.push_back({{"from", from}, {"actions", acts}, {"to", to}, {"value", value}});
        }
        r["entries"] = entries;
        rewards.push_back(r);
    }
    doc["rewards"] = rewards;
    return doc;
}

inline std::string write_instance(const Instance& m) { return canonical_json(instance_to_json(m)); }

struct ReadOptions {
    bool strict = true; // reject unknown fields
};

namespace detail {

class Reader {
public:
    explicit Reader(ReadOptions options) : options_(options) {}

    [[noreturn]] void fail(const std::string& path, const std::string& what) const { throw SchemaError(path, what); }

    const Json& field(const Json& obj, const std::string& path, const char* name) const {
        auto it = obj.find(name);
        if (it == obj.end())
            fail(path + "." + name, "missing field");
        return *it;
    }

    void object(const Json& j, const std::string& path, std::initializer_list<const char*> known) const {
        if (!j.is_object())
            fail(path, "expected an object");
        if (!options_.strict)
            return;
        for (const auto& [key, value] : j.items())
            if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
                fail(path + "." + key, "unknown field");
    }

    const Json& array(const Json& j, const std::string& path) const {
        if (!j.is_array())
            fail(path, "expected an array");
        return j;
    }

    int integer(const Json& j, const std::string& path) const {
        if (!j.is_number_integer())
            fail(path, "expected an integer");
        const auto v = j.get<std::int64_t>();
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
            fail(path, "integer out of range");
        return static_cast<int>(v);
    }

    double number(const Json& j, const std::string& path) const {
        if (!j.is_number())
            fail(path, "expected a number");
        return j.get<double>();
    }

    std::string string(const Json& j, const std::string& path) const {
        if (!j.is_string())
            fail(path, "expected a string");
        return j.get<std::string>();
    }

    std::vector<int> integers(const Json& j, const std::string& path) const {
        array(j, path);
        std::vector<int> out;
        for (std::size_t k = 0; k < j.size(); ++k)
            out.push_back(integer(j[k], path + "[" + std::to_string(k) + "]"));
        return out;
    }

    void version(const Json& doc) const {
        const auto v = string(field(doc, "$", "schema_version"), "$.schema_version");
        int major = 0;
        try {
            major = std::stoi(v);
        } catch (const std::exception&) {
            fail("$.schema_version", "malformed version '" + v + "'");
        }
        if (major > 1)
            fail("$.schema_version", "unsupported schema version " + v);
        if (major < 1)
            fail("$.schema_version", "malformed version '" + v + "'");
    }

private:
    ReadOptions options_;
};

inline Json parse_json(const std::string& text) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw SchemaError("$", "parse error at byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

} // namespace detail

// Parses an instance document. Structural problems raise SchemaError with
// the JSON path; model-level checks are left to validate_instance.
inline Instance instance_from_json(const Json& doc, ReadOptions options = {}) {
    const detail::Reader rd(options);
    rd.object(doc, "$", {"schema_version", "metadata", "horizon", "initial_state", "agents", "rewards"});
    rd.version(doc);
    Instance m;

    const auto& meta = rd.field(doc, "$", "metadata");
    rd.object(meta, "$.metadata", {"generator", "params", "seed", "rng"});
    m.metadata.generator = rd.string(rd.field(meta, "$.metadata", "generator"), "$.metadata.generator");
    const auto& params = rd.field(meta, "$.metadata", "params");
    if (!params.is_object())
        rd.fail("$.metadata.params", "expected an object");
    for (const auto& [k, v] : params.items())
        m.metadata.params[k] = rd.string(v, "$.metadata.params." + k);
    const auto& seed = rd.field(meta, "$.metadata", "seed");
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0))
        rd.fail("$.metadata.seed", "expected a non-negative integer");
    m.metadata.seed = seed.get<std::uint64_t>();
    m.metadata.rng = rd.string(rd.field(meta, "$.metadata", "rng"), "$.metadata.rng");

    m.horizon = rd.integer(rd.field(doc, "$", "horizon"), "$.horizon");
    m.initial = rd.integers(rd.field(doc, "$", "initial_state"), "$.initial_state");

    const auto& agents = rd.array(rd.field(doc, "$", "agents"), "$.agents");
    for (std::size_t i = 0; i < agents.size(); ++i) {
        const std::string ap = "$.agents[" + std::to_string(i) + "]";
        const auto& a = agents[i];
        rd.object(a, ap, {"name", "features", "states", "actions", "transitions"});
        LocalModel model;
        model.name = rd.string(rd.field(a, ap, "name"), ap + ".name");
        const auto& features = rd.array(rd.field(a, ap, "features"), ap + ".features");
        for (std::size_t k = 0; k < features.size(); ++k)
            model.feature_names.push_back(rd.string(features[k], ap + ".features[" + std::to_string(k) + "]"));
        const auto& states = rd.array(rd.field(a, ap, "states"), ap + ".states");
        for (std::size_t k = 0; k < states.size(); ++k) {
            const std::string sp = ap + ".states[" + std::to_string(k) + "]";
            rd.object(states[k], sp, {"id", "label", "features"});
            if (rd.integer(rd.field(states[k], sp, "id"), sp + ".id") != static_cast<int>(k))
                rd.fail(sp + ".id", "state ids must be dense and ascending");
            model.add_state(rd.string(rd.field(states[k], sp, "label"), sp + ".label"),
                            rd.integers(rd.field(states[k], sp, "features"), sp + ".features"));
        }
        const auto& actions = rd.array(rd.field(a, ap, "actions"), ap + ".actions");
        for (std::size_t k = 0; k < actions.size(); ++k) {
            const std::string xp = ap + ".actions[" + std::to_string(k) + "]";
            rd.object(actions[k], xp, {"id", "label"});
            if (rd.integer(rd.field(actions[k], xp, "id"), xp + ".id") != static_cast<int>(k))
                rd.fail(xp + ".id", "action ids must be dense and ascending");
            model.add_action(rd.string(rd.field(actions[k], xp, "label"), xp + ".label"));
        }
        const auto& transitions = rd.array(rd.field(a, ap, "transitions"), ap + ".transitions");
        for (std::size_t k = 0; k < transitions.size(); ++k) {
            const std::string tp = ap + ".transitions[" + std::to_string(k) + "]";
            const auto& tr = transitions[k];
            rd.object(tr, tp, {"state", "action", "outcomes"});
            const int s = rd.integer(rd.field(tr, tp, "state"), tp + ".state");
            const int x = rd.integer(rd.field(tr, tp, "action"), tp + ".action");
            if (s < 0 || s >= model.num_states())
                rd.fail(tp + ".state", "unknown state " + std::to_string(s));
            if (x < 0 || x >= model.num_actions())
                rd.fail(tp + ".action", "unknown action " + std::to_string(x));
            if (!model.outcomes(s, x).empty())
                rd.fail(tp, "duplicate transition for state " + std::to_string(s) + ", action " + std::to_string(x));
            const auto& outs = rd.array(rd.field(tr, tp, "outcomes"), tp + ".outcomes");
            std::vector<Outcome> list;
            for (std::size_t o = 0; o < outs.size(); ++o) {
                const std::string op = tp + ".outcomes[" + std::to_string(o) + "]";
                rd.object(outs[o], op, {"next", "probability"});
                list.push_back({rd.integer(rd.field(outs[o], op, "next"), op + ".next"),
                                rd.number(rd.field(outs[o], op, "probability"), op + ".probability")});
            }
            if (list.empty())
                rd.fail(tp + ".outcomes", "no outcomes");
            model.set_outcomes(s, x, std::move(list));
        }
        m.agents.push_back(std::move(model));
    }

    const auto& rewards = rd.array(rd.field(doc, "$", "rewards"), "$.rewards");
    for (std::size_t r = 0; r < rewards.size(); ++r) {
        const std::string rp = "$.rewards[" + std::to_string(r) + "]";
        const auto& j = rewards[r];
        rd.object(j, rp, {"name", "scope", "views", "default", "entries", "owner"});
        RewardFunction f;
        f.name = rd.string(rd.field(j, rp, "name"), rp + ".name");
        f.scope = rd.integers(rd.field(j, rp, "scope"), rp + ".scope");
        for (std::size_t k = 0; k < f.scope.size(); ++k)
            if (f.scope[k] < 0 || f.scope[k] >= m.num_agents())
                rd.fail(rp + ".scope[" + std::to_string(k) + "]", "unknown agent " + std::to_string(f.scope[k]));
        const auto& views = rd.array(rd.field(j, rp, "views"), rp + ".views");
        if (views.size() != f.scope.size())
            rd.fail(rp + ".views", "expected one view per scope member");
        std::vector<std::size_t> widths;
        for (std::size_t k = 0; k < views.size(); ++k) {
            const std::string vp = rp + ".views[" + std::to_string(k) + "]";
            if (views[k].is_null()) {
                f.views.push_back(std::nullopt);
                widths.push_back(1);
                continue;
            }
            rd.array(views[k], vp);
            const auto& model = m.agents[f.scope[k]];
            std::vector<FeatureId> ids;
            for (std::size_t q = 0; q < views[k].size(); ++q) {
                const auto name = rd.string(views[k][q], vp + "[" + std::to_string(q) + "]");
                const int id = model.feature_index(name);
                if (id < 0)
                    rd.fail(vp + "[" + std::to_string(q) + "]", "unknown feature '" + name + "'");
                ids.push_back(id);
            }
            widths.push_back(ids.size());
            f.views.push_back(std::move(ids));
        }
        f.default_value = rd.number(rd.field(j, rp, "default"), rp + ".default");
        if (j.contains("owner"))
            f.owner = rd.integer(j["owner"], rp + ".owner");
        const auto& entries = rd.array(rd.field(j, rp, "entries"), rp + ".entries");
        for (std::size_t e = 0; e < entries.size(); ++e) {
            const std::string ep = rp + ".entries[" + std::to_string(e) + "]";
            rd.object(entries[e], ep, {"from", "actions", "to", "value"});
            const auto& from = rd.array(rd.field(entries[e], ep, "from"), ep + ".from");
            const auto acts = rd.integers(rd.field(entries[e], ep, "actions"), ep + ".actions");
            const auto& to = rd.array(rd.field(entries[e], ep, "to"), ep + ".to");
            if (from.size() != widths.size() || acts.size() != widths.size() || to.size() != widths.size())
                rd.fail(ep, "expected one from/action/to per scope member");
            std::vector<int> key;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                const auto fk = rd.integers(from[k], ep + ".from[" + std::to_string(k) + "]");
                const auto tk = rd.integers(to[k], ep + ".to[" + std::to_string(k) + "]");
                if (fk.size() != widths[k])
                    rd.fail(ep + ".from[" + std::to_string(k) + "]", "key width does not match the view");
                if (tk.size() != widths[k])
                    rd.fail(ep + ".to[" + std::to_string(k) + "]", "key width does not match the view");
                key.insert(key.end(), fk.begin(), fk.end());
                key.push_back(acts[k]);
                key.insert(key.end(), tk.begin(), tk.end());
            }
            if (!f.entries.emplace(key, rd.number(rd.field(entries[e], ep, "value"), ep + ".value")).second)
                rd.fail(ep, "duplicate entry");
        }
        m.rewards.push_back(std::move(f));
    }
    return m;
}

inline Instance read_instance(const std::string& text, ReadOptions options = {}) {
    return instance_from_json(detail::parse_json(text), options);
}

inline std::string write_policy(const Policy& pi) {
    Json doc;
    doc["schema_version"] = schema_version;
    doc["kind"] = "policy";
    Json entries = Json::array();
    for (const auto& e : pi.entries())
        entries.push_back({{"t", e.t}, {"agents", e.agents}, {"states", e.states}, {"actions", e.actions}});
    doc["entries"] = entries;
    return canonical_json(doc);
}

inline Policy read_policy(const std::string& text, ReadOptions options = {}) {
    const Json doc = detail::parse_json(text);
    const detail::Reader rd(options);
    rd.object(doc, "$", {"schema_version", "kind", "entries"});
    rd.version(doc);
    if (rd.string(rd.field(doc, "$", "kind"), "$.kind") != "policy")
        rd.fail("$.kind", "expected \"policy\"");
    Policy pi;
    const auto& entries = rd.array(rd.field(doc, "$", "entries"), "$.entries");
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const std::string ep = "$.entries[" + std::to_string(k) + "]";
        rd.object(entries[k], ep, {"t", "agents", "states", "actions"});
        try {
            pi.set(rd.integer(rd.field(entries[k], ep, "t"), ep + ".t"),
                   rd.integers(rd.field(entries[k], ep, "agents"), ep + ".agents"),
                   rd.integers(rd.field(entries[k], ep, "states"), ep + ".states"),
                   rd.integers(rd.field(entries[k], ep, "actions"), ep + ".actions"));
        } catch (const ContractError& e) {
            rd.fail(ep, e.what());
        }
    }
    return pi;
}

// Result rows

struct ResultRow {
    enum class Status { solved, timeout, resource };
    std::string instance;
    std::string algorithm;
    Status status = Status::solved;
    std::optional<double> value;
    long long joint_actions_evaluated = 0;
    long long nodes_pruned = 0;
    long long decouple_events = 0;
    double wall_time_ms = 0.0;
};

inline const char* status_name(ResultRow::Status s) {
    switch (s) {
    case ResultRow::Status::solved:
        return "solved";
    case ResultRow::Status::timeout:
        return "timeout";
    case ResultRow::Status::resource:
        return "resource";
    }
    return "?";
}

inline constexpr const char* results_header =
    "instance,algorithm,status,value,joint_actions_evaluated,nodes_pruned,decouple_events,wall_time_ms";

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos)
        return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + '"';
}

// Header plus one line per row, ordered by instance then algorithm. Values
// only appear on solved rows.
inline std::string write_results(std::vector<ResultRow> rows) {
    std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& x, const ResultRow& y) {
        return std::tie(x.instance, x.algorithm) < std::tie(y.instance, y.algorithm);
    });
    std::string out = std::string(results_header) + "\n";
    char buf[64];
    for (const auto& r : rows) {
        out += csv_field(r.instance) + ',' + csv_field(r.algorithm) + ',' + status_name(r.status) + ',';
        if (r.status == ResultRow::Status::solved && r.value)
            out += detail::format_double(*r.value);
        out += ',' + std::to_string(r.joint_actions_evaluated) + ',' + std::to_string(r.nodes_pruned) + ',' +
               std::to_string(r.decouple_events) + ',';
        std::snprintf(buf, sizeof buf, "%.3f", r.wall_time_ms);
        out += buf;
        out += '\n';
    }
    return out;
}

// Splits RFC-4180 text into records of fields.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t k = 0; k < text.size(); ++k) {
        const char c = text[k];
        if (quoted) {
            if (c == '"') {
                if (k + 1 < text.size() && text[k + 1] == '"') {
                    field += '"';
                    ++k;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && k + 1 < text.size() && text[k + 1] == '\n')
                ++k;
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            any = false;
        } else {
            field += c;
            any = true;
        }
    }
    if (quoted)
        throw ContractError("unterminated quoted CSV field");
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

// DOT

namespace detail {

inline std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\')
            out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out;
}

inline std::string superscript(int n) {
    static const char* digits[] = {"⁰", "¹", "²", "³", "⁴", "⁵", "⁶", "⁷", "⁸", "⁹"};
    const std::string s = std::to_string(n);
    std::string out;
    for (char c : s)
        out += digits[c - '0'];
    return out;
}

inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

} // namespace detail

struct DotOptions {
    bool bounds = false; // annotate state nodes with [L, U]
};

// Layered rendering of one agent's CRG: circles for local states, points
// for tree nodes, triangles for influence-tree roots. Trees are drawn once
// per stage at which their state is reachable.
inline std::string export_dot(const ConditionalReturnGraph& g, DotOptions options = {}) {
    const auto& m = g.instance();
    const auto& model = m.agents[g.owner()];
    const auto& tree = g.tree_agents();
    std::ostringstream os;
    os << "digraph crg_agent" << g.owner() << " {\n";
    os << "  rankdir=LR;\n";
    auto state_id = [](int t, StateId s) { return "s" + std::to_string(t) + "_" + std::to_string(s); };
    auto state_label = [&](StateId s) {
        const auto& label = model.states[s].label;
        return label.empty() ? "s" + std::to_string(s) : label;
    };
    auto agent_mark = [&](int pos) { return detail::superscript(tree[pos] + 1); };

    for (int t = 0; t <= g.horizon(); ++t) {
        os << "  subgraph layer" << t << " {\n    rank=same;\n";
        for (StateId s : g.layer(t)) {
            std::string label = state_label(s);
            if (options.bounds)
                label += "\n[" + detail::format_number(g.lower(t, s)) + ", " + detail::format_number(g.upper(t, s)) + "]";
            os << "    " << state_id(t, s) << " [shape=circle, label=\"" << detail::dot_escape(label) << "\"];\n";
        }
        os << "  }\n";
    }

    for (int t = 0; t < g.horizon(); ++t)
        for (StateId s : g.layer(t))
            for (ActionId a : g.kept_actions(t, s)) {
                const int root = g.tree_root(s, a);
                const std::string action = model.actions[a].label.empty() ? std::to_string(a) : model.actions[a].label;
                const auto& rn = g.tree_node(root);
                if (rn.arcs.empty()) {
                    // A tree without levels collapses into labelled reward arcs.
                    for (const auto& leaf : rn.leaf_arcs)
                        os << "  " << state_id(t, s) << " -> " << state_id(t + 1, leaf.next) << " [label=\""
                           << detail::dot_escape(action + " : " + detail::format_number(leaf.reward)) << "\"];\n";
                    continue;
                }
                const std::string prefix = "n" + std::to_string(t) + "_" + std::to_string(s) + "_";
                std::vector<int> stack{root};
                std::set<int> seen;
                os << "  " << state_id(t, s) << " -> " << prefix << root << " [label=\"" << detail::dot_escape(action)
                   << "\"];\n";
                while (!stack.empty()) {
                    const int id = stack.back();
                    stack.pop_back();
                    if (!seen.insert(id).second)
                        continue;
                    const auto& nd = g.tree_node(id);
                    const char* shape = nd.kind == CrgNode::Kind::influence_root ? "triangle" : "point";
                    os << "  " << prefix << id << " [shape=" << shape << ", label=\"\"];\n";
                    for (const auto& arc : nd.arcs) {
                        std::string label;
                        const auto& other = m.agents[tree[arc.position]];
                        switch (arc.kind) {
                        case CrgArc::Kind::action:
                            label = (other.actions[arc.action].label.empty() ? std::to_string(arc.action)
                                                                              : other.actions[arc.action].label) +
                                    agent_mark(arc.position);
                            break;
                        case CrgArc::Kind::any_action:
                            label = "*" + agent_mark(arc.position);
                            break;
                        case CrgArc::Kind::pair:
                            label = "(" + g.key_label(arc.position, arc.from_key) + ")→(" +
                                    g.key_label(arc.position, arc.to_key) + ")" + agent_mark(arc.position);
                            break;
                        case CrgArc::Kind::no_influence:
                            label = "⊥" + agent_mark(arc.position);
                            break;
                        }
                        os << "  " << prefix << id << " -> " << prefix << arc.child << " [label=\""
                           << detail::dot_escape(label) << "\"];\n";
                        stack.push_back(arc.child);
                    }
                    for (const auto& leaf : nd.leaf_arcs)
                        os << "  " << prefix << id << " -> " << state_id(t + 1, leaf.next) << " [label=\""
                           << detail::format_number(leaf.reward) << "\"];\n";
                }
            }
    os << "}\n";
    return os.str();
}

// Execution tree of a policy from s_0: one circle per reachable (stage,
// joint state), arcs labelled with the joint action and its probability.
inline std::string export_policy_dot(const Instance& m, const Policy& pi) {
    std::ostringstream os;
    os << "digraph policy {\n  rankdir=LR;\n";
    std::vector<std::map<JointState, int>> ids(m.horizon + 1);
    int counter = 0;
    auto node = [&](int t, const JointState& s) {
        auto [it, fresh] = ids[t].emplace(s, counter);
        if (fresh) {
            ++counter;
            std::string label = "t=" + std::to_string(t) + "\n";
            for (AgentId i = 0; i < m.num_agents(); ++i) {
                const auto& st = m.agents[i].states[s[i]];
                label += (i ? " " : "") + (st.label.empty() ? std::to_string(s[i]) : st.label);
            }
            os << "  j" << it->second << " [shape=circle, label=\"" << detail::dot_escape(label) << "\"];\n";
        }
        return std::pair{it->second, fresh};
    };
    std::vector<std::pair<int, JointState>> stack{{0, m.initial}};
    node(0, m.initial);
    while (!stack.empty()) {
        auto [t, s] = stack.back();
        stack.pop_back();
        if (t >= m.horizon)
            continue;
        const auto a = pi.require(t, s);
        std::string action;
        for (AgentId i = 0; i < m.num_agents(); ++i) {
            const auto& label = m.agents[i].actions[a[i]].label;
            action += (i ? " " : "") + (label.empty() ? std::to_string(a[i]) : label) + detail::superscript(i + 1);
        }
        const int from = ids[t].at(s);
        for (const auto& o : enumerate_successors(m, s, a)) {
            auto [to, fresh] = node(t + 1, o.state);
            os << "  j" << from << " -> j" << to << " [label=\""
               << detail::dot_escape(action + " (" + detail::format_number(o.probability) + ")") << "\"];\n";
            if (fresh)
                stack.push_back({t + 1, o.state});
        }
    }
    os << "}\n";
    return os.str();
}

} // namespace timmdp
