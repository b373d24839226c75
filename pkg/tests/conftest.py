import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from kitempc import cli
from kitempc.simulator import read_log_csv


@dataclass
class ScenarioRun:
    out: Path
    exit_code: int
    seconds: float
    summary: dict
    columns: dict

    def array(self, name):
        return np.asarray(self.columns[name], dtype=float)


def run_bundled(name, out, *extra):
    start = time.perf_counter()
    code = cli.main(["simulate", "--scenario", name, "--out", str(out), *extra])
    seconds = time.perf_counter() - start
    summary = json.loads((out / "summary.json").read_text())
    columns = read_log_csv((out / "log.csv").read_text())
    return ScenarioRun(out, code, seconds, summary, columns)


@pytest.fixture(scope="session")
def flight1_run(tmp_path_factory):
    return run_bundled("flight1", tmp_path_factory.mktemp("flight1"))


@pytest.fixture(scope="session")
def flight2_run(tmp_path_factory):
    return run_bundled("flight2", tmp_path_factory.mktemp("flight2"))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in criterion order."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                verdict = "PASS" if outcome == "passed" else "FAIL"
                lines.append((props["criterion"], verdict, props["title"], rep.duration + props["run_seconds"]))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, title, seconds in sorted(lines):
        terminalreporter.write_line(f"criterion {number:2d}  {verdict:4s}  {title}  ({seconds:.1f} s)")
