"""Python front end to the bsdelab C++ core.

Configs and summaries are plain dicts; everything else is forwarded to the native module.
"""

import json
import pathlib

from . import _bsdelab
from ._bsdelab import ConfigError, NumericalError, exit_time_exponential, set_thread_count, thread_count

__all__ = [
    "ConfigError",
    "NumericalError",
    "Run",
    "describe",
    "exit_time_exponential",
    "list_instances",
    "resolve_config",
    "run",
    "set_thread_count",
    "thread_count",
]


class Run:
    def __init__(self, summary, artifacts, checks_passed):
        self.summary = summary
        self.artifacts = artifacts
        self.checks_passed = checks_passed

    def write(self, directory):
        out = pathlib.Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.artifacts.items():
            (out / name).write_text(text)
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2))
        return out


def _text(config):
    return config if isinstance(config, str) else json.dumps(config)


def resolve_config(config):
    return json.loads(_bsdelab.resolve_config(_text(config)))


def run(config):
    summary, artifacts, passed = _bsdelab.run_experiment(_text(config))
    return Run(json.loads(summary), dict(artifacts), passed)


def list_instances():
    return json.loads(_bsdelab.registry_listing())


def describe(name):
    return json.loads(_bsdelab.describe(name))
