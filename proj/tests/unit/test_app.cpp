#include <doctest.h>

#include "bsdelab/app/config.hpp"
#include "bsdelab/app/experiments.hpp"
#include "bsdelab/app/registry.hpp"
#include "bsdelab/core/error.hpp"

#include <filesystem>
#include <numbers>

using namespace bsdelab;

namespace {

std::string config_error(const Json& raw) {
    try {
        resolve_config(raw);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

const Artifact& artifact(const RunResult& r, const std::string& name) {
    for (const auto& a : r.artifacts)
        if (a.name == name) return a;
    FAIL("missing artifact " << name);
    return r.artifacts.front();
}

} // namespace

TEST_SUITE("app") {

TEST_CASE("config resolution fills defaults and rejects bad input") {
    const Json c = resolve_config(parse_config_text("// comment\n{\"kind\": \"oracle\", \"instances\": 3}"));
    CHECK(c.at("instances") == 3);
    CHECK(c.at("check") == "bsde");
    CHECK(c.at("seed") == 1);

    CHECK(config_error({{"kind", "oracle"}, {"bogus", 1}}).find("unknown key 'bogus'") != std::string::npos);
    CHECK(config_error({{"kind", "linear"}, {"K", 2.5}}).find("must be an integer") != std::string::npos);
    CHECK(config_error({{"kind", "linear"}, {"method", "magic"}}).find("is not one of") != std::string::npos);
    CHECK(config_error({{"kind", "linear"}, {"M", 0}}).find("must be positive") != std::string::npos);
    CHECK(config_error({{"kind", "nope"}}).find("unknown experiment kind") != std::string::npos);
    CHECK(config_error({{"seed", 1}}).find("needs a string 'kind'") != std::string::npos);
    // all problems are reported together
    const std::string many = config_error({{"kind", "linear"}, {"a", 1}, {"b", 2}});
    CHECK(many.find("'a'") != std::string::npos);
    CHECK(many.find("'b'") != std::string::npos);
    CHECK_THROWS_AS(parse_config_text("{not json"), ConfigError);

    const Json q = resolve_config({{"kind", "quadratic"}, {"driver", "custom"}, {"custom_driver", {{"n", 2}}}});
    CHECK(q.at("custom_driver").at("class") == "quadratic-linear");
    CHECK(config_error({{"kind", "quadratic"}, {"custom_driver", {{"zzz", 1}}}}).find("custom_driver") != std::string::npos);
}

TEST_CASE("config hash ignores threads and output only") {
    Json a = resolve_config({{"kind", "oracle"}});
    Json b = a;
    b["threads"] = 4;
    b["output"] = "/tmp/x";
    CHECK(config_hash(a) == config_hash(b));
    b["seed"] = 2;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(config_hash(a).rfind("sha256:", 0) == 0);
    CHECK(config_hash(a).size() == 7 + 64);
}

TEST_CASE("registry listing and describe") {
    const Json l = registry_listing();
    const auto names = l.at("names").get<std::vector<std::string>>();
    for (const char* n : {"emery", "nonexistence", "cole-hopf-1d", "triangular-3"})
        CHECK(std::find(names.begin(), names.end(), n) != names.end());
    const Json e = describe_instance("emery");
    CHECK(e.at("level").get<double>() == doctest::Approx(std::numbers::pi / 2));
    try {
        describe_instance("emry");
        FAIL("expected an error");
    } catch (const ConfigError& err) {
        CHECK(std::string(err.what()).find("did you mean: emery") != std::string::npos);
    }
    CHECK(describe_instance("quadratic").at("defaults").at("driver") == "cole-hopf-1d");
}

TEST_CASE("runs are deterministic and independent of the thread count") {
    Json raw = {{"kind", "linear"}, {"instance", "triangular-3"}, {"K", 10}, {"M", 3000}, {"seed", 9}};
    raw["threads"] = 1;
    const RunResult a = run_experiment(resolve_config(raw));
    raw["threads"] = 3;
    const RunResult b = run_experiment(resolve_config(raw));
    CHECK(artifact(a, "solution.csv").content == artifact(b, "solution.csv").content);
    CHECK(a.summary.at("results") == b.summary.at("results"));
    CHECK(a.summary.at("provenance").at("config_hash") == b.summary.at("provenance").at("config_hash"));
    CHECK(a.summary.at("config").at("instance") == "triangular-3");
}

TEST_CASE("trivial experiments") {
    const RunResult rp = run_experiment(resolve_config(
        {{"kind", "reverse-holder"}, {"field", "zero"}, {"method", "regression"}, {"K", 10}, {"M", 500}}));
    CHECK(rp.summary.at("results").at("Rp").at("value").get<double>() == doctest::Approx(1.0));
    CHECK(rp.summary.at("results").at("Rp").at("std_error").get<double>() == doctest::Approx(0.0));

    const RunResult eq = run_experiment(resolve_config({{"kind", "equivalence-suite"}, {"instances", 5}, {"max_K", 5}}));
    CHECK(eq.checks_passed);
    CHECK(eq.summary.at("status") == "ok");

    const RunResult orc = run_experiment(resolve_config({{"kind", "oracle"}, {"check", "rp"}, {"instances", 5}}));
    CHECK(orc.summary.at("results").at("hand_example_R2") == 1.25);

    const auto dir = std::filesystem::temp_directory_path() / "bsdelab_app_test";
    std::filesystem::remove_all(dir);
    write_run(orc, dir.string());
    CHECK(std::filesystem::exists(dir / "summary.json"));
    CHECK(std::filesystem::exists(dir / "oracle_rp.csv"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("custom quadratic driver") {
    const Json raw = {{"kind", "quadratic"},
                      {"driver", "custom"},
                      {"custom_driver", {{"class", "quadratic-linear"}, {"n", 1}, {"b", {0.5}}, {"L", 0.0}}},
                      {"K", 20},
                      {"M", 4000}};
    const RunResult r = run_experiment(resolve_config(raw));
    // identical to the shipped Cole-Hopf instance
    const double y0 = r.summary.at("results").at("Y0")[0];
    const double se = r.summary.at("results").at("Y0_std_error")[0];
    CHECK(std::abs(y0 - 0.5) <= 4.0 * se);

    Json bad = raw;
    bad["custom_driver"]["b"] = {0.5, 0.1};
    CHECK_THROWS_AS(run_experiment(resolve_config(bad)), ConfigError);
}

} // TEST_SUITE
