import numpy as np
import pytest

from syrem.memory import Sample
from syrem.net import EndpointMLP, NetConfig

_CRITERIA: list[str] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" -- {detail}" if detail else "")
    _CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def make_samples(rng, n, dim, task_id=0, start=0, scale=1.0):
    out = []
    for i in range(n):
        h = rng.normal(size=2)
        out.append(Sample(task_id, start + i, rng.normal(size=dim), scale * rng.normal(size=2),
                          float(rng.uniform(0, 15)), h / np.hypot(*h)))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    return EndpointMLP(NetConfig(input_dim=5, hidden_dims=(6,), n_heads=3, activation="tanh"))
