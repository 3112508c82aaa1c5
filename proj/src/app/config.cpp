#include "bsdelab/app/config.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/exponential/field.hpp"
#include "bsdelab/linear/linear.hpp"
#include "bsdelab/quadratic/quadratic.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace bsdelab {

namespace {

const std::vector<std::pair<ExperimentKind, std::string>>& kind_table() {
    static const std::vector<std::pair<ExperimentKind, std::string>> t = {
        {ExperimentKind::exponential, "exponential"},
        {ExperimentKind::reverse_holder, "reverse-holder"},
        {ExperimentKind::counterexample, "counterexample"},
        {ExperimentKind::linear, "linear"},
        {ExperimentKind::quadratic, "quadratic"},
        {ExperimentKind::oracle, "oracle"},
        {ExperimentKind::equivalence_suite, "equivalence-suite"},
    };
    return t;
}

std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
}

Json common_defaults() {
    return {{"kind", ""}, {"seed", 1}, {"threads", 0}, {"output", ""}, {"description", ""}};
}

Json custom_driver_defaults() {
    return {{"class", "quadratic-linear"},
            {"n", 1},
            {"d", 1},
            {"b", Json::array()},
            {"a", Json::array()},
            {"h", "half-squared"},
            {"g_matrix", Json::array()},
            {"g_offset", Json::array()},
            {"L", 0.0},
            {"xi", "identity"},
            {"xi_scale", 1.0},
            {"ab_vectors", Json::array()},
            {"ab_rho", 0.0}};
}

std::vector<std::string> choices_for(const std::string& key, ExperimentKind kind) {
    if (key == "field") return shipped_field_names();
    if (key == "method" && kind == ExperimentKind::reverse_holder) return {"regression", "nested"};
    if (key == "method" && kind == ExperimentKind::linear) return {"auto", "representation", "regression", "structural"};
    if (key == "example") return {"exit-time", "emery", "nonexistence"};
    if (key == "instance") return shipped_linear_names();
    if (key == "structure") return {"", "triangular", "right-outer", "left-outer", "generic", "scalar", "emery"};
    if (key == "driver") {
        auto v = shipped_quadratic_names();
        v.push_back("custom");
        return v;
    }
    if (key == "init") return {"zero", "conditional-terminal"};
    if (key == "check") return {"bsde", "duality", "rp"};
    if (key == "class") return {"quadratic-linear", "unidirectional", "lipschitz"};
    if (key == "h") return {"half-squared", "directional"};
    if (key == "xi") return {"identity", "sin", "tanh"};
    return {};
}

std::string type_name(const Json& v) {
    if (v.is_number_integer()) return "integer";
    if (v.is_number()) return "number";
    return v.type_name();
}

bool compatible(const Json& def, const Json& v) {
    if (def.is_boolean()) return v.is_boolean();
    if (def.is_number_integer()) return v.is_number_integer();
    if (def.is_number()) return v.is_number();
    if (def.is_string()) return v.is_string();
    if (def.is_array()) return v.is_array();
    if (def.is_object()) return v.is_object();
    return false;
}

void check_object(const Json& raw, const Json& defaults, ExperimentKind kind, const std::string& where, Json& out,
                  std::vector<std::string>& problems) {
    out = defaults;
    for (auto it = raw.begin(); it != raw.end(); ++it) {
        const std::string& key = it.key();
        if (!defaults.contains(key)) {
            std::vector<std::string> keys;
            for (auto d = defaults.begin(); d != defaults.end(); ++d) keys.push_back(d.key());
            problems.push_back(where + "unknown key '" + key + "' (allowed: " + join(keys) + ")");
            continue;
        }
        const Json& def = defaults.at(key);
        if (!compatible(def, it.value())) {
            problems.push_back(where + "key '" + key + "' must be " + (def.is_number_integer() ? "an integer" : type_name(def)) +
                               ", got " + type_name(it.value()));
            continue;
        }
        if (it.value().is_string()) {
            const auto ch = choices_for(key, kind);
            if (!ch.empty() && std::find(ch.begin(), ch.end(), it.value().get<std::string>()) == ch.end()) {
                problems.push_back(where + "key '" + key + "' = '" + it.value().get<std::string>() +
                                   "' is not one of: " + join(ch));
                continue;
            }
        }
        if (it.value().is_array())
            for (const auto& e : it.value())
                if (!e.is_number() && !e.is_array()) {
                    problems.push_back(where + "key '" + key + "' must hold numbers");
                    break;
                }
        out[key] = it.value();
    }
}

Json kind_defaults(ExperimentKind kind) {
    switch (kind) {
    case ExperimentKind::exponential:
        return {{"field", "triangular-3"}, {"T", 1.0},        {"K", 800},
                {"M", 2000},               {"records", 21},  {"inverse", true},
                {"continuation", false}};
    case ExperimentKind::reverse_holder:
        return {{"field", "scalar-half"}, {"T", 1.0},    {"K", 200},       {"M", 20000},
                {"p", 2.0},               {"method", "nested"}, {"degree", 3}, {"records", 11},
                {"outer_paths", 200},     {"inner_paths", 2000}};
    case ExperimentKind::counterexample:
        return {{"example", "exit-time"},
                {"b", std::numbers::pi / 3},
                {"dt", 1e-4},
                {"M", 0},
                {"max_time", 50.0},
                {"bridge", true},
                {"T_eff", 40.0},
                {"K", 40000},
                {"euler_steps", {200, 400, 800}},
                {"euler_paths", 20000},
                {"prefix", 40},
                {"j_sim", 4}};
    case ExperimentKind::linear:
        return {{"instance", "triangular-3"},
                {"structure", ""},
                {"method", "auto"},
                {"perturbation", 0.0},
                {"q", 0.0},
                {"T", 1.0},
                {"K", 50},
                {"M", 20000},
                {"degree", 3},
                {"defect_tolerance", 0.05}};
    case ExperimentKind::quadratic:
        return {{"driver", "cole-hopf-1d"},
                {"custom_driver", Json::object()},
                {"init", "zero"},
                {"compare_init", false},
                {"k_schedule", {2, 4, 8, 16, 32, 64, 128}},
                {"inactive_margin", 0.2},
                {"step_tolerance", 1e-10},
                {"max_halvings", 3},
                {"T", 1.0},
                {"K", 50},
                {"M", 20000},
                {"degree", 3},
                {"sup_trim", 0.02},
                {"stability_eps", Json::array()},
                {"lyapunov_k", -1.0},
                {"lyapunov_c", 1.0}};
    case ExperimentKind::oracle:
        return {{"check", "bsde"}, {"instances", 25}, {"max_K", 8}, {"max_n", 3},
                {"max_d", 2},      {"p", 2.0},        {"dump_tree", false}};
    case ExperimentKind::equivalence_suite:
        return {{"instances", 25}, {"max_K", 8}, {"max_n", 3}, {"max_d", 2}};
    }
    return Json::object();
}

} // namespace

std::string to_string(ExperimentKind k) {
    for (const auto& [kind, name] : kind_table())
        if (kind == k) return name;
    return "exponential";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
    for (const auto& [kind, name] : kind_table())
        if (name == s) return kind;
    throw ConfigError("unknown experiment kind '" + s + "' (known: " + join(experiment_kind_names()) + ")");
}

std::vector<std::string> experiment_kind_names() {
    std::vector<std::string> v;
    for (const auto& [kind, name] : kind_table()) v.push_back(name);
    return v;
}

Json parse_config_text(const std::string& text) {
    try {
        return Json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

Json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

Json config_defaults(ExperimentKind kind) {
    Json d = common_defaults();
    d.update(kind_defaults(kind));
    d["kind"] = to_string(kind);
    return d;
}

Json resolve_config(const Json& raw) {
    if (!raw.is_object()) throw ConfigError("config must be a JSON object");
    if (!raw.contains("kind") || !raw.at("kind").is_string())
        throw ConfigError("config needs a string 'kind' (one of: " + join(experiment_kind_names()) + ")");
    const ExperimentKind kind = parse_experiment_kind(raw.at("kind").get<std::string>());
    std::vector<std::string> problems;
    Json out;
    check_object(raw, config_defaults(kind), kind, "", out, problems);
    if (kind == ExperimentKind::quadratic) {
        Json custom;
        check_object(out.at("custom_driver"), custom_driver_defaults(), kind, "custom_driver: ", custom, problems);
        if (out.at("driver") == "custom") out["custom_driver"] = custom;
        else if (!out.at("custom_driver").empty())
            problems.push_back("custom_driver is only read when driver = \"custom\"");
    }
    for (const char* key : {"K", "M", "T", "instances", "records"})
        if (out.contains(key) && out.at(key).is_number() && out.at(key).get<double>() <= 0.0 &&
            !(kind == ExperimentKind::counterexample && std::string(key) == "M"))
            problems.push_back(std::string("key '") + key + "' must be positive");
    if (out.at("seed").get<long long>() < 0) problems.push_back("key 'seed' must be nonnegative");
    if (out.at("threads").get<long long>() < 0) problems.push_back("key 'threads' must be nonnegative");
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const auto& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    return out;
}

std::string config_hash(const Json& resolved) {
    Json h = resolved;
    h.erase("threads");
    h.erase("output");
    const std::string text = h.dump();
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr);
    std::ostringstream os;
    os << "sha256:";
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

Json module_versions() {
    return {{"library", kLibraryVersion},      {"stochastic-core", "0.1.0"}, {"exponential-engine", "0.1.0"},
            {"counterexamples", "0.1.0"},      {"discrete-oracle", "0.1.0"}, {"linear-bsde", "0.1.0"},
            {"quadratic-bsde", "0.1.0"},       {"cli", "0.1.0"}};
}

} // namespace bsdelab
