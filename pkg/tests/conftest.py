import numpy as np
import pytest

from robust_cascade.synth import SynthConfig, generate_synthetic_dataset

ACCEPTANCE_LINES = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    """Print a pass/fail line now and repeat it in the terminal summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_train():
    return generate_synthetic_dataset(SynthConfig(n_samples=300, seed=1))


@pytest.fixture(scope="session")
def synth_test():
    return generate_synthetic_dataset(SynthConfig(n_samples=100, seed=2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
