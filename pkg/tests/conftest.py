import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = [
    "backbone.channels=4,4,6,6,8",
    "backbone.enhance_width=6",
    "data.classes=3",
    "data.train_per_class=4",
    "data.test_per_class=2",
    "training.epochs=2",
    "training.batch_size=4",
    "training.eval_every=1",
]


@pytest.fixture
def tiny_config():
    from gacnn.config import TrainConfig

    return TrainConfig().with_overrides(TINY)


@pytest.fixture
def tiny_data(tiny_config):
    from gacnn.data import generate_synthetic, synth_spec_from_config

    return generate_synthetic(synth_spec_from_config(tiny_config))


# (number, title, passed, detail) per acceptance criterion, printed after the run
ACCEPTANCE: list[tuple[int, str, bool, str]] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    print(line)
    ACCEPTANCE.append((number, title, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
