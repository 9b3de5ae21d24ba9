import json
from pathlib import Path

import numpy as np
import pytest

from netadmm.harness import ExperimentConfig, build_network, build_problem

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

ACCEPTANCE_LINES: list[str] = []


def load_config_dict(name):
    return json.loads((CONFIGS / name).read_text())


def instance_from(name):
    cfg = ExperimentConfig.load(CONFIGS / name)
    return build_problem(cfg.problem, build_network(cfg.topology))


@pytest.fixture(scope="session")
def scenario_i():
    return instance_from("scenario_i.json")


@pytest.fixture(scope="session")
def q_net_a():
    return instance_from("q_net_a.json")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
