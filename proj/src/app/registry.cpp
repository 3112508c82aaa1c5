#include "bsdelab/app/registry.hpp"

#include "bsdelab/core/error.hpp"
#include "bsdelab/counterexamples/counterexamples.hpp"
#include "bsdelab/exponential/field.hpp"
#include "bsdelab/linear/linear.hpp"
#include "bsdelab/quadratic/quadratic.hpp"

#include <algorithm>
#include <numbers>
#include <set>

namespace bsdelab {

namespace {

const std::vector<std::string> kCounterexamples = {"emery", "exit-time", "nonexistence"};

std::vector<std::string> all_names() {
    std::set<std::string> s;
    for (const auto& n : shipped_field_names()) s.insert(n);
    for (const auto& n : shipped_linear_names()) s.insert(n);
    for (const auto& n : shipped_quadratic_names()) s.insert(n);
    for (const auto& n : kCounterexamples) s.insert(n);
    for (const auto& n : experiment_kind_names()) s.insert(n);
    return {s.begin(), s.end()};
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
    std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
    for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
    for (std::size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

Json field_entry(const CoefficientField& f) {
    Json j = {{"name", f.name()},
              {"n", f.n()},
              {"d", f.d()},
              {"structure", to_string(f.structure())},
              {"markov", f.markov()},
              {"description", f.description}};
    if (f.declared_bmo_bound) j["declared_bmo_bound"] = *f.declared_bmo_bound;
    return j;
}

Json quadratic_entry(const QuadraticSpec& s) {
    const QuadraticDriver& f = s.driver;
    Json j = {{"name", s.name}, {"class", to_string(f.kind)}, {"n", f.n}, {"d", f.d}, {"L", f.L},
              {"has_g", static_cast<bool>(f.g)}, {"has_ab_condition", s.ab.has_value()}};
    if (f.b.size() > 0) j["b"] = std::vector<double>(f.b.data(), f.b.data() + f.b.size());
    if (f.a.size() > 0) j["a"] = std::vector<double>(f.a.data(), f.a.data() + f.a.size());
    return j;
}

} // namespace

std::vector<std::string> suggest_names(const std::string& name, std::size_t max_count) {
    std::vector<std::pair<std::size_t, std::string>> scored;
    for (const auto& n : all_names()) {
        std::size_t dist = edit_distance(name, n);
        if (!name.empty() && (n.find(name) != std::string::npos || name.find(n) != std::string::npos)) dist = 0;
        if (dist <= std::max<std::size_t>(2, name.size() / 3)) scored.emplace_back(dist, n);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < scored.size() && i < max_count; ++i) out.push_back(scored[i].second);
    return out;
}

Json registry_listing() {
    Json fields = Json::array(), linear = Json::array(), quadratic = Json::array();
    for (const auto& n : shipped_field_names()) fields.push_back(field_entry(shipped_field(n)));
    for (const auto& n : shipped_linear_names()) {
        const LinearBsdeSpec s = shipped_linear(n);
        linear.push_back({{"name", n}, {"n", s.n()}, {"d", s.d()}, {"field", s.A.name()},
                          {"structure", to_string(s.A.structure())}, {"homogeneous", s.homogeneous()}});
    }
    for (const auto& n : shipped_quadratic_names()) quadratic.push_back(quadratic_entry(shipped_quadratic(n)));
    return {{"coefficient_fields", fields},
            {"linear_instances", linear},
            {"quadratic_drivers", quadratic},
            {"counterexamples", kCounterexamples},
            {"experiment_kinds", experiment_kind_names()},
            {"names", all_names()}};
}

Json describe_instance(const std::string& name) {
    if (name == "emery") {
        Json j = {{"name", "emery"},
                  {"category", "counterexample"},
                  {"closed_form", "S_t = exp(tau^t / 2) [[cos B, sin B], [-sin B, cos B]] at B = B_{tau^t}"},
                  {"stopping_time", "tau = inf{t : |B_t| = pi/2}"},
                  {"level", std::numbers::pi / 2},
                  {"coefficient", "A = J = [[0, 1], [-1, 0]] on {t < tau}, 0 afterwards"},
                  {"martingale", "E[S_t] diagonal tends to 0 while S_0 = I: a strict local martingale"}};
        j["field"] = field_entry(shipped_field("emery"));
        return j;
    }
    if (name == "exit-time")
        return {{"name", "exit-time"},
                {"category", "counterexample"},
                {"identity", "E[exp(sigma_b / 2)] = 1 / cos(b) for sigma_b = inf{t : |W_t| = b}, 0 < b < pi/2"},
                {"examples", {{{"b", std::numbers::pi / 4}, {"value", std::numbers::sqrt2}},
                              {{"b", std::numbers::pi / 3}, {"value", 2.0}}}}};
    if (name == "nonexistence") {
        NonexistenceSpec ns;
        Json levels = Json::array();
        for (std::size_t k = 1; k <= 8; ++k) levels.push_back({{"k", k}, {"b_k", ns.b(k)}, {"term", ns.term(k)}});
        return {{"name", "nonexistence"},
                {"category", "counterexample"},
                {"levels", "cos(b_k) = k / 2^k, so 2^{-k} / cos(b_k) = 1/k"},
                {"time_change", "f = 0 on [0, T/2], 1/(T - s) on [T/2, T)"},
                {"terminal", "xi = (cos N_tau, sin N_tau)"},
                {"first_levels", levels}};
    }
    const auto kinds = experiment_kind_names();
    if (std::find(kinds.begin(), kinds.end(), name) != kinds.end())
        return {{"name", name}, {"category", "experiment kind"}, {"defaults", config_defaults(parse_experiment_kind(name))}};
    Json out = Json::object();
    const auto fields = shipped_field_names(), lin = shipped_linear_names(), quad = shipped_quadratic_names();
    if (std::find(fields.begin(), fields.end(), name) != fields.end()) out["coefficient_field"] = field_entry(shipped_field(name));
    if (std::find(lin.begin(), lin.end(), name) != lin.end()) {
        const LinearBsdeSpec s = shipped_linear(name);
        out["linear_instance"] = {{"name", name}, {"n", s.n()}, {"d", s.d()}, {"field", field_entry(s.A)},
                                  {"homogeneous", s.homogeneous()}};
    }
    if (std::find(quad.begin(), quad.end(), name) != quad.end()) out["quadratic_driver"] = quadratic_entry(shipped_quadratic(name));
    if (!out.empty()) {
        out["name"] = name;
        return out;
    }
    std::string msg = "unknown instance '" + name + "'";
    const auto sug = suggest_names(name);
    if (!sug.empty()) {
        msg += "; did you mean:";
        for (const auto& s : sug) msg += " " + s;
    }
    throw ConfigError(msg);
}

} // namespace bsdelab
