import numpy as np
import pytest

from edrl.model import ModelConfig, ModelParameters

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key:<4} {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def tiny_config():
    return ModelConfig(feature_dim=3, d_model=4, encoder_layers=2, predictor_layers=1, joint_dim=5, vocab_size=3)


@pytest.fixture
def tiny_params(tiny_config):
    return ModelParameters.init(tiny_config, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
