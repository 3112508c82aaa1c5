#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bsdelab/app/config.hpp"
#include "bsdelab/app/experiments.hpp"
#include "bsdelab/app/registry.hpp"
#include "bsdelab/core/error.hpp"
#include "bsdelab/core/parallel.hpp"
#include "bsdelab/counterexamples/counterexamples.hpp"

namespace py = pybind11;
using namespace bsdelab;

// JSON crosses the boundary as text; the Python package wraps it with the json module.
PYBIND11_MODULE(_bsdelab, m) {
    m.doc() = "bsdelab native core";

    static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
    static py::exception<NumericalError> numerical_error(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            config_error(e.what());
        } catch (const NumericalError& e) {
            numerical_error(e.what());
        }
    });

    m.def("resolve_config", [](const std::string& text) { return resolve_config(parse_config_text(text)).dump(); },
          py::arg("config_json"));

    m.def(
        "run_experiment",
        [](const std::string& text) {
            const Json resolved = resolve_config(parse_config_text(text));
            RunResult r;
            {
                py::gil_scoped_release release;
                r = run_experiment(resolved);
            }
            py::dict artifacts;
            for (const auto& a : r.artifacts) artifacts[py::str(a.name)] = a.content;
            return py::make_tuple(r.summary.dump(), artifacts, r.checks_passed);
        },
        py::arg("config_json"), "Returns (summary_json, {artifact name: text}, checks_passed).");

    m.def("registry_listing", [] { return registry_listing().dump(); });
    m.def("describe", [](const std::string& name) { return describe_instance(name).dump(); }, py::arg("name"));
    m.def("suggest_names", &suggest_names, py::arg("name"), py::arg("max_count") = 3);

    m.def(
        "exit_time_exponential",
        [](double b, std::size_t paths, double dt, std::uint64_t seed) {
            ExitTimeOptions o;
            o.paths = paths;
            o.dt = dt;
            o.seed = seed;
            ExitTimeEstimate e;
            {
                py::gil_scoped_release release;
                e = exit_time_exponential(b, o);
            }
            py::dict d;
            d["estimate"] = e.estimate;
            d["std_error"] = e.std_error;
            d["exact"] = e.exact;
            d["mean_exit_time"] = e.mean_exit_time;
            d["unexited"] = e.unexited;
            return d;
        },
        py::arg("b"), py::arg("paths") = 100000, py::arg("dt") = 1e-4, py::arg("seed") = 1);

    m.def("set_thread_count", &set_thread_count, py::arg("threads"));
    m.def("thread_count", &thread_count);
}
