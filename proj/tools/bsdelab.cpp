// Command line front end: every subcommand builds one experiment config and runs it.

#include "bsdelab/app/config.hpp"
#include "bsdelab/app/experiments.hpp"
#include "bsdelab/app/registry.hpp"
#include "bsdelab/core/error.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>

using bsdelab::Json;

namespace {

enum Exit { ok = 0, checks_failed = 1, config_error = 2, numerical_error = 3 };

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> threads;
    std::string out;
    std::vector<std::string> sets;
    std::map<std::string, std::string> flags; // config key -> raw flag text
};

// Numbers, booleans and arrays are read as JSON; anything else is a plain string.
Json flag_value(const std::string& text) {
    try {
        Json j = Json::parse(text);
        if (!j.is_object()) return j;
    } catch (const Json::parse_error&) {
    }
    return text;
}

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "JSON config file (comments allowed)");
    app->add_option("--seed", c.seed, "override the config seed");
    app->add_option("--threads", c.threads, "worker threads (0 = hardware); results do not depend on it");
    app->add_option("--out", c.out, "output directory for summary.json and CSV artifacts");
    app->add_option("--set", c.sets, "override a config key, key=value (repeatable)");
}

void add_flag(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        flag, [&c, key](const std::string& v) { c.flags[key] = v; }, help);
}

void add_grid_flags(CLI::App* app, Common& c) {
    add_flag(app, c, "--T", "T", "horizon");
    add_flag(app, c, "--K", "K", "time steps");
    add_flag(app, c, "--M", "M", "paths");
}

Json build_config(const std::string& kind, const Common& c, const std::map<std::string, std::string>& fixed) {
    Json raw = Json::object();
    if (!c.config_path.empty()) raw = bsdelab::load_config_file(c.config_path);
    if (!raw.is_object()) throw bsdelab::ConfigError("config must be a JSON object");
    if (!kind.empty()) {
        if (raw.contains("kind") && raw.at("kind") != kind)
            throw bsdelab::ConfigError("config kind '" + raw.at("kind").dump() + "' does not match subcommand kind '" +
                                       kind + "'");
        raw["kind"] = kind;
    }
    for (const auto& [k, v] : fixed) raw[k] = v;
    for (const auto& [k, v] : c.flags) raw[k] = flag_value(v);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0) throw bsdelab::ConfigError("--set expects key=value, got '" + s + "'");
        raw[s.substr(0, eq)] = flag_value(s.substr(eq + 1));
    }
    if (c.seed) raw["seed"] = *c.seed;
    if (c.threads) {
        raw["threads"] = *c.threads;
    } else if (const char* env = std::getenv("BSDE_LAB_THREADS"); env && *env) {
        try {
            raw["threads"] = std::stoul(env);
        } catch (const std::exception&) {
            throw bsdelab::ConfigError(std::string("BSDE_LAB_THREADS must be a nonnegative integer, got '") + env + "'");
        }
    }
    if (!c.out.empty()) raw["output"] = c.out;
    return bsdelab::resolve_config(raw);
}

int execute(const std::string& kind, const Common& c, const std::map<std::string, std::string>& fixed = {}) {
    const Json cfg = build_config(kind, c, fixed);
    const bsdelab::RunResult run = bsdelab::run_experiment(cfg);
    const std::string dir = cfg.at("output");
    if (!dir.empty()) bsdelab::write_run(run, dir);
    std::cout << run.summary.dump(2) << '\n';
    if (!run.checks_passed) std::cerr << "bsdelab: built-in checks failed\n";
    return run.checks_passed ? ok : checks_failed;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo and exact-oracle laboratory for multidimensional BSDEs"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(bsdelab::kLibraryVersion));

    Common common;
    std::string positional;
    std::function<int()> action;

    auto* sim = app.add_subcommand("simulate-exponential", "integrate dS = S dM and report the martingale defect");
    add_common(sim, common);
    add_flag(sim, common, "--field", "field", "coefficient field name");
    add_grid_flags(sim, common);
    sim->callback([&] { action = [&] { return execute("exponential", common); }; });

    auto* rp = app.add_subcommand("estimate-rp", "estimate the reverse Holder constant R_p");
    add_common(rp, common);
    add_flag(rp, common, "--field", "field", "coefficient field name");
    add_flag(rp, common, "--p", "p", "exponent p >= 1");
    add_flag(rp, common, "--method", "method", "regression or nested");
    add_grid_flags(rp, common);
    rp->callback([&] { action = [&] { return execute("reverse-holder", common); }; });

    auto* lin = app.add_subcommand("solve-linear", "solve a linear BSDE driven by dA");
    add_common(lin, common);
    add_flag(lin, common, "--instance", "instance", "shipped linear instance");
    add_flag(lin, common, "--structure", "structure", "generic, triangular, left-outer, right-outer, scalar or emery");
    add_flag(lin, common, "--method", "method", "auto, representation, regression or structural");
    add_flag(lin, common, "--perturbation", "perturbation", "epsilon for the alpha/dA perturbation");
    add_flag(lin, common, "--q", "q", "estimate the solution operator norm on L^q (0 = skip)");
    add_grid_flags(lin, common);
    lin->callback([&] { action = [&] { return execute("linear", common); }; });

    auto* quad = app.add_subcommand("solve-quadratic", "solve a quadratic BSDE by truncation and Picard iteration");
    add_common(quad, common);
    add_flag(quad, common, "--driver", "driver", "shipped driver name or custom");
    add_flag(quad, common, "--init", "init", "zero or conditional-terminal");
    add_grid_flags(quad, common);
    quad->callback([&] { action = [&] { return execute("quadratic", common); }; });

    auto* cex = app.add_subcommand("counterexample", "run one of the counterexamples");
    add_common(cex, common);
    cex->add_option("example", positional, "emery, exit-time or nonexistence")
        ->required()
        ->check(CLI::IsMember({"emery", "exit-time", "nonexistence"}));
    add_flag(cex, common, "--b", "b", "exit level for exit-time");
    add_flag(cex, common, "--M", "M", "paths (0 = example default)");
    cex->callback([&] { action = [&] { return execute("counterexample", common, {{"example", positional}}); }; });

    auto* orc = app.add_subcommand("oracle", "exact checks on random binary trees");
    add_common(orc, common);
    orc->add_option("check", positional, "bsde, duality or rp")->required()->check(CLI::IsMember({"bsde", "duality", "rp"}));
    add_flag(orc, common, "--instances", "instances", "number of random trees");
    add_flag(orc, common, "--p", "p", "exponent for duality and rp");
    orc->callback([&] { action = [&] { return execute("oracle", common, {{"check", positional}}); }; });

    auto* eq = app.add_subcommand("equivalence-suite", "R_p and operator-norm equivalences on random trees");
    add_common(eq, common);
    add_flag(eq, common, "--instances", "instances", "number of random trees");
    eq->callback([&] { action = [&] { return execute("equivalence-suite", common); }; });

    auto* run = app.add_subcommand("run", "run the experiment described by a config file");
    add_common(run, common);
    run->get_option("--config")->required();
    run->callback([&] { action = [&] { return execute("", common); }; });

    auto* list = app.add_subcommand("list", "machine-readable listing of built-in instances");
    list->callback([&] {
        action = [] {
            std::cout << bsdelab::registry_listing().dump(2) << '\n';
            return int(ok);
        };
    });

    auto* desc = app.add_subcommand("describe", "describe one built-in instance");
    desc->add_option("name", positional, "instance name")->required();
    desc->callback([&] {
        action = [&] {
            std::cout << bsdelab::describe_instance(positional).dump(2) << '\n';
            return int(ok);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }
    try {
        return action();
    } catch (const bsdelab::ConfigError& e) {
        std::cerr << "bsdelab: config error: " << e.what() << '\n';
        return config_error;
    } catch (const bsdelab::NumericalError& e) {
        std::cerr << "bsdelab: numerical error: " << e.what() << '\n';
        return numerical_error;
    } catch (const Json::exception& e) {
        std::cerr << "bsdelab: config error: " << e.what() << '\n';
        return config_error;
    } catch (const std::exception& e) {
        std::cerr << "bsdelab: error: " << e.what() << '\n';
        return numerical_error;
    }
}
